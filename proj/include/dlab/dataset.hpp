// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlab/tensor.hpp"
#include "dlab/trigger.hpp"

namespace dlab {

using Batch = std::vector<std::size_t>;

// Single-channel images with pixels in [0, 1] and labels in [0, classes).
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t classes, std::size_t height, std::size_t width, std::vector<double> pixels,
          std::vector<std::size_t> labels, std::uint64_t seed = 0);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels_per_image() const noexcept { return height_ * width_; }
  Shape sample_shape() const { return {1, height_, width_}; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels_).subspan(i * pixels_per_image(), pixels_per_image());
  }
  std::size_t label(std::size_t i) const { return labels_.at(i); }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }

  // [k, 1, H, W] batch of the selected samples.
  Tensor images(std::span<const std::size_t> index) const;
  Tensor all_images() const;
  std::vector<std::size_t> labels(std::span<const std::size_t> index) const;
  Batch all_indices() const;
  Dataset subset(std::span<const std::size_t> index) const;
  std::size_t count_label(std::size_t label) const;

 private:
  std::size_t classes_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
  std::vector<std::size_t> labels_;
  std::uint64_t seed_ = 0;
};

// Class c is a fixed arrangement of c + 1 bright rectangles on a dark
// background, placed by a generator seeded from `seed`; every sample adds
// N(0, noise_sigma^2) per pixel and is clipped to [0, 1].
Dataset gen_synthetic(std::size_t classes, std::size_t per_class, std::size_t height, std::size_t width,
                      double noise_sigma, std::uint64_t seed);

// Seeded stratified split; every class lands on both sides.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_frac, std::uint64_t seed);

// Shuffled batches for one epoch; the permutation is keyed by (shuffle_seed,
// epoch). The final short batch is kept.
std::vector<Batch> batches(std::size_t count, std::size_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch);
inline std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed,
                                  std::uint64_t epoch) {
  return batches(data.size(), batch_size, shuffle_seed, epoch);
}

// Every sample with the trigger applied and relabelled to the target. With
// exclusion on, samples whose ground truth already is the target are dropped.
class PoisonedView {
 public:
  PoisonedView(const Dataset& base, const Trigger& trigger, std::size_t target, bool exclude_target);

  std::size_t size() const noexcept { return members_.size(); }
  std::size_t target() const noexcept { return target_; }
  const Batch& base_indices() const noexcept { return members_; }

  // Poisoned images for view positions [0, size()).
  Tensor images(std::span<const std::size_t> positions) const;
  Tensor all_images() const;
  std::vector<std::size_t> labels(std::size_t count) const { return std::vector<std::size_t>(count, target_); }

 private:
  const Dataset* base_;
  const Trigger* trigger_;
  std::size_t target_;
  Batch members_;
};

PoisonedView poison(const Dataset& base, const Trigger& trigger, std::size_t target, bool exclude_target);

// Raw format: u32 n, u32 classes, u32 height, u32 width (little-endian), then
// n*H*W unsigned bytes (pixel * 255) and n label bytes.
void save_dataset_binary(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset_binary(const std::filesystem::path& path);

// "index,label" rows.
std::string labels_csv(const Dataset& data);

}  // namespace dlab
