// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dlab/distill.hpp"
#include "dlab/optim.hpp"
#include "dlab/params.hpp"

namespace dlab {

NcInversion nc_invert_class(const Network& model, const Dataset& data, std::size_t c, const NcConfig& cfg) {
  require(c < model.class_count(), ErrorCode::kInvalidArgument, "nc_invert_class: class out of range");
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "nc_invert_class: batch_size must be at least 1");
  require(cfg.l1_weight >= 0.0, ErrorCode::kInvalidArgument, "nc_invert_class: l1 weight must be non-negative");
  Shape raw_shape = data.sample_shape();
  raw_shape.insert(raw_shape.begin(), 1);
  Tensor m_raw(raw_shape, 0.0), p_raw(raw_shape, 0.0);
  Adam m_adam(cfg.lr), p_adam(cfg.lr);
  const auto params = model.params();

  std::vector<Batch> order;
  std::size_t cursor = 0, epoch = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor >= order.size()) {
      order = batches(data, cfg.batch_size, cfg.seed, epoch++);
      cursor = 0;
    }
    const Batch& b = order[cursor++];
    Tape<double> tape;
    auto v = bind(tape, params, false);
    Var mr = tape.input(m_raw, true), pr = tape.input(p_raw, true);
    Var mask = tape.sigmoid(mr), pattern = tape.sigmoid(pr);
    Var x = tape.constant(data.images(b));
    Var tm = tape.tile_batch(mask, b.size()), tp = tape.tile_batch(pattern, b.size());
    Var blended = tape.add(x, tape.mul(tm, tape.sub(tp, x)));
    const std::vector<std::size_t> labels(b.size(), c);
    Var loss = tape.cross_entropy(model.build(tape, v, blended).logits, labels);
    loss = tape.add(loss, tape.scale(tape.l1(mask), cfg.l1_weight));
    auto grads = tape.backward(loss);
    m_adam.step(m_raw.data(), grads[mr].data());
    p_adam.step(p_raw.data(), grads[pr].data());
  }

  NcInversion out{Tensor(data.sample_shape(), 0.0), Tensor(data.sample_shape(), 0.0), 0.0};
  for (std::size_t i = 0; i < m_raw.size(); ++i) {
    out.mask[i] = 1.0 / (1.0 + std::exp(-m_raw[i]));
    out.pattern[i] = 1.0 / (1.0 + std::exp(-p_raw[i]));
    out.l1_norm += out.mask[i];
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<double> nc_anomaly_index(std::span<const double> l1_norms) {
  require(l1_norms.size() >= 3, ErrorCode::kInvalidArgument, "nc_anomaly_index: needs at least 3 classes");
  std::vector<double> norms(l1_norms.begin(), l1_norms.end());
  const double med = median(norms);
  std::vector<double> dev;
  for (double x : norms) dev.push_back(std::abs(x - med));
  const double mad = std::max(1.4826 * median(dev), 1e-9);
  std::vector<double> index;
  for (double x : norms) index.push_back(x < med ? (med - x) / mad : 0.0);
  return index;
}

NcReport neural_cleanse(const Network& model, const Dataset& data, const NcConfig& cfg) {
  NcReport r;
  for (std::size_t c = 0; c < model.class_count(); ++c)
    r.per_class_l1.push_back(nc_invert_class(model, data, c, cfg).l1_norm);
  r.anomaly_index = nc_anomaly_index(r.per_class_l1);
  for (std::size_t c = 0; c < r.anomaly_index.size(); ++c)
    if (r.anomaly_index[c] > 2.0) r.flagged.push_back(c);
  return r;
}

std::string nc_report_csv(const NcReport& report) {
  std::string out = "class,l1_norm,anomaly_index,flagged\n";
  char buf[128];
  for (std::size_t c = 0; c < report.per_class_l1.size(); ++c) {
    const bool flagged = std::find(report.flagged.begin(), report.flagged.end(), c) != report.flagged.end();
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%d\n", c, report.per_class_l1[c], report.anomaly_index[c],
                  flagged ? 1 : 0);
    out += buf;
  }
  return out;
}

std::vector<double> amplified_confidence(const Network& model, const Tensor& images, std::span<const double> factors) {
  for (double f : factors)
    require(f >= 1.0 && std::isfinite(f), ErrorCode::kInvalidArgument, "scale_up: factors must be at least 1");
  const auto pred = predict(model, images);
  const std::size_t n = images.dim(0);
  std::vector<double> out;
  for (double f : factors) {
    Tensor scaled = images;
    for (double& x : scaled.data()) x = std::clamp(f * x, 0.0, 1.0);
    const Tensor logits = model.logits(scaled);
    const std::size_t c = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = logits.ptr() + i * c;
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      total += std::exp(row[pred[i]] - mx) / z;
    }
    out.push_back(total / static_cast<double>(n));
  }
  return out;
}

ScaleUpCurve scale_up_curve(const Network& model, const Tensor& benign, const Tensor& poisoned,
                            std::span<const double> factors) {
  return {std::vector<double>(factors.begin(), factors.end()), amplified_confidence(model, benign, factors),
          amplified_confidence(model, poisoned, factors)};
}

std::string scale_up_csv(const ScaleUpCurve& curve) {
  std::string out = "factor,benign_conf,poisoned_conf\n";
  char buf[128];
  for (std::size_t i = 0; i < curve.factors.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f\n", curve.factors[i], curve.benign_confidence[i],
                  curve.poisoned_confidence[i]);
    out += buf;
  }
  return out;
}

}  // namespace dlab
