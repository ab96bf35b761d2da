// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "dlab/attack.hpp"
#include "dlab/distill.hpp"
#include "dlab/optim.hpp"
#include "dlab/rng.hpp"

namespace dlab {

namespace {

template <class S>
std::vector<double> leaf_values(const Tape<S>& tape, std::span<const Var> leaves) {
  std::vector<double> out;
  for (Var v : leaves)
    for (const S& x : tape.value(v).data()) out.push_back(primal(x));
  return out;
}

std::uint64_t hash_values(const std::vector<double>& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix_seed(h ^ bits);
  }
  return h ^ values.size();
}

Tensor gather_rows(const Tensor& all, const Batch& idx) {
  const std::size_t width = all.size() / all.dim(0);
  std::vector<double> out(idx.size() * width);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(all.ptr() + idx[k] * width, width, out.begin() + static_cast<std::ptrdiff_t>(k * width));
  return Tensor({idx.size(), width}, std::move(out));
}

template <class S>
Var outer_terms(Tape<S>& tape, const Network& teacher, std::span<const Var> lambda, const Network& surrogate,
                std::span<const Var> omega, const Tensor& images, const std::vector<std::size_t>& labels,
                const Trigger& trigger, const ScarWeights& w) {
  Var x = tape.constant(images);
  const bool poisoned_terms = w.alpha != 0.0 || w.gamma != 0.0;
  Var xp = poisoned_terms ? tape.constant(inject(images, trigger)) : x;
  const std::vector<std::size_t> targets(labels.size(), trigger.target);
  Var loss = tape.cross_entropy(teacher.build(tape, lambda, x).logits, labels);
  if (w.alpha != 0.0)
    loss = tape.add(loss, tape.scale(tape.cross_entropy(teacher.build(tape, lambda, xp).logits, labels), w.alpha));
  if (w.beta != 0.0)
    loss = tape.add(loss, tape.scale(tape.cross_entropy(surrogate.build(tape, omega, x).logits, labels), w.beta));
  if (w.gamma != 0.0)
    loss = tape.add(loss, tape.scale(tape.cross_entropy(surrogate.build(tape, omega, xp).logits, targets), w.gamma));
  return loss;
}

template <class S>
Var inner_terms(Tape<S>& tape, Var surrogate_logits, Var teacher_logits, const std::vector<std::size_t>& labels,
                const ScarWeights& w) {
  Var loss = tape.cross_entropy(surrogate_logits, labels);
  if (w.delta == 0.0) return loss;
  return tape.add(loss, tape.scale(tape.kl_logits(surrogate_logits, teacher_logits, w.tau), w.delta));
}

}  // namespace

ScarProblem::ScarProblem(Architecture teacher, Architecture surrogate, const Dataset& train, const Trigger& trigger,
                         ScarWeights weights)
    : teacher_(Network::init(teacher, 0)), surrogate_(Network::init(surrogate, 0)), train_(&train),
      trigger_(&trigger), w_(weights) {
  for (double v : {w_.alpha, w_.beta, w_.gamma, w_.delta})
    require(v >= 0.0 && std::isfinite(v), ErrorCode::kInvalidArgument, "scar: loss weights must be non-negative");
  require(w_.tau > 0.0, ErrorCode::kInvalidArgument, "scar: tau must be positive");
  require(teacher.input == train.sample_shape() && surrogate.input == train.sample_shape(), ErrorCode::kShape,
          "scar: network inputs do not match the dataset");
  require(teacher.class_count == train.classes() && surrogate.class_count == train.classes(),
          ErrorCode::kValidation, "scar: class counts do not match the dataset");
  require(trigger.target < train.classes(), ErrorCode::kInvalidArgument, "scar: trigger target out of range");
}

const Tensor& ScarProblem::cached_logits(const std::vector<double>& lambda) const {
  const std::uint64_t key = hash_values(lambda);
  if (cache_valid_ && key == cache_key_) return cache_;
  Network t(teacher_.architecture(), ParamVector(teacher_.params().layout_ptr(), lambda));
  constexpr std::size_t kChunk = 500;
  const std::size_t n = train_->size(), c = train_->classes();
  std::vector<double> logits(n * c);
  for (std::size_t start = 0; start < n; start += kChunk) {
    Batch idx;
    for (std::size_t i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    const Tensor part = t.logits(train_->images(idx));
    std::copy(part.data().begin(), part.data().end(), logits.begin() + static_cast<std::ptrdiff_t>(start * c));
  }
  cache_ = Tensor({n, c}, std::move(logits));
  cache_key_ = key;
  cache_valid_ = true;
  return cache_;
}

template <class S>
Var ScarProblem::inner_impl(Tape<S>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  Var x = tape.constant(train_->images(batch));
  const auto labels = train_->labels(batch);
  Var s = surrogate_.build(tape, omega, x).logits;
  Var t;
  if (w_.delta == 0.0)
    t = s;
  else if (tape.requires_grad(lambda.front()))
    t = teacher_.build(tape, lambda, x).logits;
  else
    t = tape.constant(gather_rows(cached_logits(leaf_values(tape, lambda)), batch));
  return inner_terms(tape, s, t, labels, w_);
}

template <class S>
Var ScarProblem::outer_impl(Tape<S>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  return outer_terms(tape, teacher_, lambda, surrogate_, omega, train_->images(batch), train_->labels(batch),
                     *trigger_, w_);
}

Var ScarProblem::inner_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  return inner_impl(tape, omega, lambda, batch);
}
Var ScarProblem::inner_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  return inner_impl(tape, omega, lambda, batch);
}
Var ScarProblem::outer_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  return outer_impl(tape, omega, lambda, batch);
}
Var ScarProblem::outer_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                            const Batch& batch) const {
  return outer_impl(tape, omega, lambda, batch);
}

ParamVector ScarProblem::initial_inner(std::uint64_t seed) const {
  return Network::init(surrogate_.architecture(), seed).params();
}

double scar_outer_loss(const Network& teacher, const Network& surrogate, const Tensor& images,
                       const std::vector<std::size_t>& labels, const Trigger& trigger, const ScarWeights& w) {
  Tape<double> tape;
  auto l = bind(tape, teacher.params(), false);
  auto o = bind(tape, surrogate.params(), false);
  return tape.value(outer_terms(tape, teacher, l, surrogate, o, images, labels, trigger, w))[0];
}

double scar_inner_loss(const Network& teacher, const Network& surrogate, const Tensor& images,
                       const std::vector<std::size_t>& labels, const ScarWeights& w) {
  Tape<double> tape;
  auto l = bind(tape, teacher.params(), false);
  auto o = bind(tape, surrogate.params(), false);
  Var x = tape.constant(images);
  return tape.value(inner_terms(tape, surrogate.build(tape, o, x).logits, teacher.build(tape, l, x).logits, labels,
                                w))[0];
}

ScarResult scar_train(const Network& teacher, const Architecture& surrogate_arch, const Dataset& train,
                      const Dataset& eval, const Trigger& trigger, const ScarConfig& cfg,
                      const std::function<void(const ScarEpochLog&)>& on_epoch) {
  cfg.hyper.validate();
  require(cfg.outer_rate > 0.0, ErrorCode::kInvalidArgument, "scar: outer rate must be positive");
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "scar: batch_size must be at least 1");
  ScarProblem problem(teacher.architecture(), surrogate_arch, train, trigger, cfg.weights);
  ScarResult result{teacher, {}};
  ParamVector lambda = teacher.params();
  Adam adam(cfg.outer_rate);

  for (std::size_t epoch = 0; epoch < cfg.outer_epochs; ++epoch) {
    BatchStream stream;
    if (cfg.inner_batch_size == 0)
      stream.push_back(train.all_indices());
    else
      stream = batches(train, cfg.inner_batch_size, derive_seed(cfg.seed, 1), epoch);
    auto pool = batches(train, cfg.batch_size, derive_seed(cfg.seed, 2), epoch);
    pool.resize(std::min(pool.size(), cfg.hyper.subset_batches));
    const Batch subset = concat_batches(pool);

    HypergradResult hg = hypergradient(problem, lambda, cfg.hyper, stream, subset, derive_seed(cfg.seed, 100 + epoch));
    require(hg.grad.all_finite(), ErrorCode::kDivergence, "scar: hypergradient became non-finite");
    if (cfg.cosine) adam.set_lr(cosine_lr(cfg.outer_rate, epoch, cfg.outer_epochs));
    adam.step(lambda.values(), hg.grad.values());

    result.teacher.set_params(lambda);
    const Network surrogate(surrogate_arch, hg.omega);
    ScarEpochLog row{epoch,
                     hg.partials.value,
                     accuracy(result.teacher, eval),
                     attack_success_rate(result.teacher, eval, trigger),
                     accuracy(surrogate, eval),
                     attack_success_rate(surrogate, eval, trigger)};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

std::string scar_log_csv(const std::vector<ScarEpochLog>& log) {
  std::string out = "epoch,outer_loss,teacher_acc,teacher_asr,surrogate_acc,surrogate_asr\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.4f,%.4f,%.4f,%.4f\n", r.epoch, r.outer_loss, r.teacher_acc,
                  r.teacher_asr, r.surrogate_acc, r.surrogate_asr);
    out += buf;
  }
  return out;
}

}  // namespace dlab
