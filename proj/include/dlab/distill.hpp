// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/dataset.hpp"
#include "dlab/network.hpp"
#include "dlab/tape.hpp"

namespace dlab {

enum class KdMethod { kResponse, kFeature, kRelation };

std::string_view kd_method_name(KdMethod m) noexcept;
KdMethod parse_kd_method(std::string_view name);

// tau^2 KL(softmax(teacher / tau) || softmax(student / tau)), batch mean.
template <class S>
Var response_loss(Tape<S>& tape, Var student_logits, Var teacher_logits, double tau) {
  return tape.kl_logits(student_logits, teacher_logits, tau);
}

// MSE between student_feat x adapter and teacher_feat. Without an adapter the
// widths must agree.
template <class S>
Var feature_loss(Tape<S>& tape, Var student_feat, Var teacher_feat, std::optional<Var> adapter) {
  Var projected = adapter ? tape.matmul(student_feat, *adapter) : student_feat;
  return tape.mse(projected, teacher_feat);
}

// Squared difference of the cosine-similarity Gram matrices, averaged over
// batch^2 entries.
template <class S>
Var relation_loss(Tape<S>& tape, Var student_feat, Var teacher_feat) {
  Var s = tape.row_normalize(student_feat);
  Var t = tape.row_normalize(teacher_feat);
  return tape.mse(tape.matmul(s, tape.transpose(s)), tape.matmul(t, tape.transpose(t)));
}

double loss_response(const Tensor& student_logits, const Tensor& teacher_logits, double tau = 1.0);
double loss_feature(const Tensor& student_feat, const Tensor& teacher_feat, const Tensor* adapter = nullptr);
double loss_relation(const Tensor& student_feat, const Tensor& teacher_feat);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct DistillConfig {
  KdMethod method = KdMethod::kResponse;
  double delta = 1.0;
  double tau = 1.0;
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Per-epoch mean training loss, filled when a history pointer is given.
using LossHistory = std::vector<double>;

// Plain cross-entropy training with Adam.
Network train_benign(Network net, const Dataset& train, const TrainConfig& cfg, LossHistory* history = nullptr);

// CE + delta * method loss against a frozen teacher. With delta = 0 the
// parameter trajectory is identical to train_benign under the same seed.
Network distill(const Network& teacher, Network student, const Dataset& train, const DistillConfig& cfg,
                LossHistory* history = nullptr);

// Predicted labels, evaluated in chunks.
std::vector<std::size_t> predict(const Network& net, const Tensor& images);
double accuracy(const Network& net, const Dataset& data);
// Fraction of poisoned non-target samples classified as the trigger target.
double attack_success_rate(const Network& net, const Dataset& data, const Trigger& trigger);

}  // namespace dlab
