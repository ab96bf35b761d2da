// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dlab/tensor.hpp"

namespace dlab {

class Dataset;
class Network;

// Additive perturbation `mu` (per-sample image shape) with |mu|_inf <= eps0,
// plus the label it steers towards.
struct Trigger {
  Tensor mu;
  double eps0 = 0.0;
  std::size_t target = 0;

  static Trigger zeros(const Shape& sample_shape, double eps0, std::size_t target);
  // A size x size block of +1 in the bottom-right corner; clip turns it into a
  // white patch.
  static Trigger white_patch(const Shape& sample_shape, std::size_t size, std::size_t target);

  double linf() const;
  // Clamps every coordinate of mu into [-eps0, eps0].
  void project();
};

// clip(x + mu, 0, 1), applied to each sample of `images` ([n, ...sample]).
Tensor inject(const Tensor& images, const Trigger& trigger);
void inject_into(std::span<double> image, const Trigger& trigger);

struct TriggerPretrainConfig {
  std::size_t target = 0;
  double eps0 = 0.2;
  double lr = 0.01;
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct TriggerPretrainResult {
  Trigger trigger;
  std::vector<double> loss_history;  // one entry per step, before the update
};

// Minimises CE(teacher(G(x)), y_t) + CE(student(G(x)), y_t) over mu with Adam
// steps, projecting mu onto the eps0 ball after every step.
TriggerPretrainResult pretrain_trigger(const Network& teacher, const Network& student, const Dataset& train,
                                       const TriggerPretrainConfig& cfg);

void save_trigger(const Trigger& trigger, std::size_t class_count, const std::filesystem::path& path);
Trigger load_trigger(const std::filesystem::path& path);

}  // namespace dlab
