// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dlab/dataset.hpp"
#include "dlab/network.hpp"

namespace dlab {

struct NcConfig {
  std::size_t steps = 300;
  double l1_weight = 0.01;
  double lr = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct NcInversion {
  Tensor mask;     // [1, H, W], values in (0, 1)
  Tensor pattern;  // [1, H, W], values in (0, 1)
  double l1_norm = 0.0;
};

// Smallest mask/pattern pair steering `data` to class c: minimises
// CE(model(x + m (p - x)), c) + l1_weight |m|_1 with m = sigmoid(m_raw),
// p = sigmoid(p_raw), both raw tensors starting at zero.
NcInversion nc_invert_class(const Network& model, const Dataset& data, std::size_t c, const NcConfig& cfg);

// One-sided MAD score: (median - l1_c) / (1.4826 MAD) below the median, 0
// elsewhere. The MAD is floored at 1e-9.
std::vector<double> nc_anomaly_index(std::span<const double> l1_norms);

struct NcReport {
  std::vector<double> per_class_l1;
  std::vector<double> anomaly_index;
  std::vector<std::size_t> flagged;  // index > 2
};

NcReport neural_cleanse(const Network& model, const Dataset& data, const NcConfig& cfg);
std::string nc_report_csv(const NcReport& report);

struct ScaleUpCurve {
  std::vector<double> factors;
  std::vector<double> benign_confidence;
  std::vector<double> poisoned_confidence;
};

// Mean softmax confidence of each sample's unamplified prediction after
// x -> clip(n x, 0, 1), for every factor n.
std::vector<double> amplified_confidence(const Network& model, const Tensor& images, std::span<const double> factors);

ScaleUpCurve scale_up_curve(const Network& model, const Tensor& benign, const Tensor& poisoned,
                            std::span<const double> factors);
std::string scale_up_csv(const ScaleUpCurve& curve);

}  // namespace dlab
