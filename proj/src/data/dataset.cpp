// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dlab/checkpoint.hpp"
#include "dlab/rng.hpp"

namespace dlab {

namespace {

constexpr double kBackground = 0.25;
constexpr double kForeground = 0.7;

}  // namespace

Dataset::Dataset(std::size_t classes, std::size_t height, std::size_t width, std::vector<double> pixels,
                 std::vector<std::size_t> labels, std::uint64_t seed)
    : classes_(classes), height_(height), width_(width), pixels_(std::move(pixels)), labels_(std::move(labels)),
      seed_(seed) {
  require(classes_ >= 1 && height_ >= 1 && width_ >= 1, ErrorCode::kValidation, "dataset: empty dimensions");
  require(!labels_.empty(), ErrorCode::kValidation, "dataset: no samples");
  require(pixels_.size() == labels_.size() * height_ * width_, ErrorCode::kValidation,
          "dataset: pixel count does not match n*H*W");
  for (double p : pixels_)
    require(p >= 0.0 && p <= 1.0, ErrorCode::kValidation, "dataset: pixel outside [0, 1]");
  for (std::size_t y : labels_)
    require(y < classes_, ErrorCode::kValidation, "dataset: label " + std::to_string(y) + " out of range");
}

Tensor Dataset::images(std::span<const std::size_t> index) const {
  require(!index.empty(), ErrorCode::kInvalidArgument, "dataset: empty selection");
  const std::size_t px = pixels_per_image();
  std::vector<double> data(index.size() * px);
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] < size(), ErrorCode::kInvalidArgument, "dataset: index out of range");
    std::copy_n(pixels_.begin() + static_cast<std::ptrdiff_t>(index[k] * px), px,
                data.begin() + static_cast<std::ptrdiff_t>(k * px));
  }
  return Tensor({index.size(), 1, height_, width_}, std::move(data));
}

Tensor Dataset::all_images() const { return Tensor({size(), 1, height_, width_}, pixels_); }

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> index) const {
  std::vector<std::size_t> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(labels_.at(i));
  return out;
}

Batch Dataset::all_indices() const {
  Batch b(size());
  std::iota(b.begin(), b.end(), std::size_t{0});
  return b;
}

Dataset Dataset::subset(std::span<const std::size_t> index) const {
  const std::size_t px = pixels_per_image();
  std::vector<double> pixels;
  pixels.reserve(index.size() * px);
  for (std::size_t i : index) {
    auto img = image(i);
    pixels.insert(pixels.end(), img.begin(), img.end());
  }
  return Dataset(classes_, height_, width_, std::move(pixels), labels(index), seed_);
}

std::size_t Dataset::count_label(std::size_t label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

Dataset gen_synthetic(std::size_t classes, std::size_t per_class, std::size_t height, std::size_t width,
                      double noise_sigma, std::uint64_t seed) {
  require(classes >= 2, ErrorCode::kInvalidArgument, "gen_synthetic: need at least 2 classes");
  require(height >= 8 && width >= 8, ErrorCode::kInvalidArgument, "gen_synthetic: images must be at least 8x8");
  require(per_class >= 1, ErrorCode::kInvalidArgument, "gen_synthetic: per_class must be positive");
  require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorCode::kInvalidArgument,
          "gen_synthetic: noise sigma must be a non-negative number");

  const std::size_t px = height * width;
  Rng layout(derive_seed(seed, 1));
  std::vector<std::vector<double>> templates(classes, std::vector<double>(px, kBackground));
  const std::size_t max_h = std::max<std::size_t>(3, height / 3);
  const std::size_t max_w = std::max<std::size_t>(3, width / 3);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t r = 0; r <= c; ++r) {
      const std::size_t rh = 2 + static_cast<std::size_t>(layout.below(max_h - 1));
      const std::size_t rw = 2 + static_cast<std::size_t>(layout.below(max_w - 1));
      const std::size_t y0 = static_cast<std::size_t>(layout.below(height - rh + 1));
      const std::size_t x0 = static_cast<std::size_t>(layout.below(width - rw + 1));
      for (std::size_t y = y0; y < y0 + rh; ++y)
        for (std::size_t x = x0; x < x0 + rw; ++x) templates[c][y * width + x] = kForeground;
    }
  }

  Rng noise(derive_seed(seed, 2));
  const std::size_t n = classes * per_class;
  std::vector<double> pixels(n * px);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    labels[i] = c;
    for (std::size_t p = 0; p < px; ++p) {
      double v = templates[c][p];
      if (noise_sigma > 0.0) v += noise_sigma * noise.normal();
      pixels[i * px + p] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Dataset(classes, height, width, std::move(pixels), std::move(labels), seed);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_frac, std::uint64_t seed) {
  require(train_frac > 0.0 && train_frac < 1.0, ErrorCode::kInvalidArgument, "split: train_frac must be in (0, 1)");
  std::vector<Batch> by_class(data.classes());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);

  Rng rng(derive_seed(seed, 3));
  Batch train, test;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    Batch& members = by_class[c];
    if (members.empty()) continue;
    require(members.size() >= 2, ErrorCode::kInvalidArgument,
            "split: class " + std::to_string(c) + " has fewer than 2 samples");
    rng.shuffle(std::span<std::size_t>(members));
    auto k = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(members.size())));
    k = std::clamp<std::size_t>(k, 1, members.size() - 1);
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(k), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.subset(train), data.subset(test)};
}

std::vector<Batch> batches(std::size_t count, std::size_t batch_size, std::uint64_t shuffle_seed,
                           std::uint64_t epoch) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batches: batch_size must be at least 1");
  Batch order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(shuffle_seed, epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

PoisonedView::PoisonedView(const Dataset& base, const Trigger& trigger, std::size_t target, bool exclude_target)
    : base_(&base), trigger_(&trigger), target_(target) {
  require(trigger.mu.shape() == base.sample_shape(), ErrorCode::kShape,
          "poison: trigger shape " + shape_string(trigger.mu.shape()) + " does not match images " +
              shape_string(base.sample_shape()));
  require(target < base.classes(), ErrorCode::kInvalidArgument, "poison: target label out of range");
  for (std::size_t i = 0; i < base.size(); ++i)
    if (!exclude_target || base.label(i) != target) members_.push_back(i);
}

Tensor PoisonedView::images(std::span<const std::size_t> positions) const {
  Batch idx;
  idx.reserve(positions.size());
  for (std::size_t p : positions) idx.push_back(members_.at(p));
  return inject(base_->images(idx), *trigger_);
}

Tensor PoisonedView::all_images() const { return inject(base_->images(members_), *trigger_); }

PoisonedView poison(const Dataset& base, const Trigger& trigger, std::size_t target, bool exclude_target) {
  return PoisonedView(base, trigger, target, exclude_target);
}

void save_dataset_binary(const Dataset& data, const std::filesystem::path& path) {
  std::string bytes;
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put_u32(static_cast<std::uint32_t>(data.size()));
  put_u32(static_cast<std::uint32_t>(data.classes()));
  put_u32(static_cast<std::uint32_t>(data.height()));
  put_u32(static_cast<std::uint32_t>(data.width()));
  for (double p : data.pixels()) bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(p * 255.0))));
  for (std::size_t y : data.labels()) {
    require(y < 256, ErrorCode::kValidation, "binary dataset format holds labels below 256 only");
    bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(y)));
  }
  write_file_atomic(path, bytes);
}

Dataset load_dataset_binary(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16) fail(ErrorCode::kTruncated, path.string() + ": dataset header truncated");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v |= std::uint32_t{bytes[off + i]} << (8 * i);
    return static_cast<std::size_t>(v);
  };
  const std::size_t n = u32(0), classes = u32(4), h = u32(8), w = u32(12);
  require(n > 0 && classes > 0 && h > 0 && w > 0, ErrorCode::kValidation, path.string() + ": empty dataset header");
  const std::size_t need = 16 + n * h * w + n;
  if (bytes.size() < need) fail(ErrorCode::kTruncated, path.string() + ": dataset body truncated");
  require(bytes.size() == need, ErrorCode::kValidation, path.string() + ": trailing bytes after dataset");
  std::vector<double> pixels(n * h * w);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = bytes[16 + i] / 255.0;
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[16 + n * h * w + i];
  return Dataset(classes, h, w, std::move(pixels), std::move(labels));
}

std::string labels_csv(const Dataset& data) {
  std::string out = "index,label\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(data.label(i)) + "\n";
  return out;
}

}  // namespace dlab
