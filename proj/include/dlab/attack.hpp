// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dlab/dataset.hpp"
#include "dlab/hypergrad.hpp"
#include "dlab/network.hpp"
#include "dlab/trigger.hpp"

namespace dlab {

struct ScarWeights {
  double alpha = 1.0;  // teacher CE on poisoned inputs, true labels
  double beta = 1.0;   // surrogate CE on benign inputs
  double gamma = 1.0;  // surrogate CE on poisoned inputs, target label
  double delta = 1.0;  // inner KD weight
  double tau = 1.0;
};

// Outer and inner objectives of the attack. lambda = teacher parameters,
// omega = surrogate parameters. Batches index into `train`.
//
// Holds a cache of teacher logits over the whole training set keyed by the
// lambda values, used whenever lambda is untracked; instances are therefore
// not safe to share between threads.
class ScarProblem final : public BilevelProblem {
 public:
  ScarProblem(Architecture teacher, Architecture surrogate, const Dataset& train, const Trigger& trigger,
              ScarWeights weights);

  Var inner_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                 const Batch& batch) const override;
  Var inner_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                 const Batch& batch) const override;
  Var outer_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                 const Batch& batch) const override;
  Var outer_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                 const Batch& batch) const override;
  ParamVector initial_inner(std::uint64_t seed) const override;

  const Network& teacher_shape() const noexcept { return teacher_; }
  const Network& surrogate_shape() const noexcept { return surrogate_; }

 private:
  template <class S>
  Var inner_impl(Tape<S>& tape, std::span<const Var> omega, std::span<const Var> lambda, const Batch& batch) const;
  template <class S>
  Var outer_impl(Tape<S>& tape, std::span<const Var> omega, std::span<const Var> lambda, const Batch& batch) const;
  // Teacher logits for every training sample at the given lambda values.
  const Tensor& cached_logits(const std::vector<double>& lambda) const;

  Network teacher_;    // architecture carrier; parameters come from lambda
  Network surrogate_;  // architecture carrier; parameters come from omega
  const Dataset* train_;
  const Trigger* trigger_;
  ScarWeights w_;
  mutable std::uint64_t cache_key_ = 0;
  mutable bool cache_valid_ = false;
  mutable Tensor cache_;
};

// Mean over the batch of CE(F_t(x), y) + alpha CE(F_t(G(x)), y)
//   + beta CE(F_s(x), y) + gamma CE(F_s(G(x)), y_t).
double scar_outer_loss(const Network& teacher, const Network& surrogate, const Tensor& images,
                       const std::vector<std::size_t>& labels, const Trigger& trigger, const ScarWeights& w);
// Mean CE(F_s(x), y) + delta KL response loss against F_t(x).
double scar_inner_loss(const Network& teacher, const Network& surrogate, const Tensor& images,
                       const std::vector<std::size_t>& labels, const ScarWeights& w);

struct ScarConfig {
  ScarWeights weights;
  HypergradConfig hyper;
  double outer_rate = 1e-4;  // theta
  bool cosine = false;
  std::size_t outer_epochs = 40;
  std::size_t batch_size = 32;        // subset batches
  std::size_t inner_batch_size = 0;   // 0: full-batch inner steps
  std::uint64_t seed = 0;
};

struct ScarEpochLog {
  std::size_t epoch = 0;
  double outer_loss = 0.0;
  double teacher_acc = 0.0;
  double teacher_asr = 0.0;
  double surrogate_acc = 0.0;
  double surrogate_asr = 0.0;
};

struct ScarResult {
  Network teacher;
  std::vector<ScarEpochLog> log;
};

// Outer loop: fresh surrogate, T inner steps, M-batch subset, hypergradient,
// Adam step on the teacher. Metrics in the log are measured on `eval`.
ScarResult scar_train(const Network& teacher, const Architecture& surrogate_arch, const Dataset& train,
                      const Dataset& eval, const Trigger& trigger, const ScarConfig& cfg,
                      const std::function<void(const ScarEpochLog&)>& on_epoch = {});

std::string scar_log_csv(const std::vector<ScarEpochLog>& log);

struct AdbaConfig {
  double teacher_lr = 1e-3;
  double shadow_lr = 1e-3;
  double trigger_lr = 1e-2;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct AdbaResult {
  Network teacher;
  Trigger trigger;
};

// Alternates per batch: teacher step on benign + poisoned CE, shadow step on
// the response KD loss against the teacher, trigger step pushing the shadow's
// poisoned predictions to the target.
AdbaResult adba_train(const Network& teacher, const Architecture& shadow_arch, const Dataset& train,
                      const Trigger& trigger_init, const AdbaConfig& cfg);

struct AdbaFtConfig {
  double eta = 1.0;
  double margin = 0.1;  // k
  double lr = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  bool last_layer_only = true;
  std::uint64_t seed = 0;
};

// max(z_target + k - z_true, 0) for one logit row.
double adba_hinge(std::span<const double> logits, std::size_t truth, std::size_t target, double margin);

// Mean CE on benign inputs + eta * mean hinge on poisoned non-target inputs.
Network adba_ft(const Network& teacher, const Trigger& trigger, const Dataset& train, const AdbaFtConfig& cfg);

// Copy of `train` where a `rate` fraction of non-target samples carry the
// trigger and the target label.
Dataset badnets_poison(const Dataset& train, const Trigger& trigger, double rate, std::uint64_t seed);

}  // namespace dlab
