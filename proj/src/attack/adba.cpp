// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "dlab/attack.hpp"
#include "dlab/optim.hpp"
#include "dlab/rng.hpp"

namespace dlab {

AdbaResult adba_train(const Network& teacher, const Architecture& shadow_arch, const Dataset& train,
                      const Trigger& trigger_init, const AdbaConfig& cfg) {
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "adba: batch_size must be at least 1");
  require(trigger_init.mu.shape() == train.sample_shape(), ErrorCode::kShape, "adba: trigger shape mismatch");
  AdbaResult r{teacher, trigger_init};
  Network shadow = Network::init(shadow_arch, derive_seed(cfg.seed, 7));
  ParamVector tp = teacher.params(), sp = shadow.params();
  Adam teacher_adam(cfg.teacher_lr), shadow_adam(cfg.shadow_lr), trigger_adam(cfg.trigger_lr);
  Shape batch_mu = r.trigger.mu.shape();
  batch_mu.insert(batch_mu.begin(), 1);
  const std::size_t target = r.trigger.target;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const Batch& b : batches(train, cfg.batch_size, cfg.seed, epoch)) {
      const Tensor images = train.images(b);
      const auto labels = train.labels(b);
      const std::vector<std::size_t> targets(b.size(), target);
      {
        Tape<double> tape;
        auto v = bind(tape, tp, true);
        Var loss = tape.cross_entropy(teacher.build(tape, v, tape.constant(images)).logits, labels);
        Var xp = tape.constant(inject(images, r.trigger));
        loss = tape.add(loss, tape.cross_entropy(teacher.build(tape, v, xp).logits, targets));
        teacher_adam.step(tp.values(), collect(tape.backward(loss), v, tp.layout_ptr()).values());
      }
      Tensor t_logits = Network(teacher.architecture(), tp).logits(images);
      {
        Tape<double> tape;
        auto v = bind(tape, sp, true);
        Var s = shadow.build(tape, v, tape.constant(images)).logits;
        Var loss = tape.kl_logits(s, tape.constant(t_logits), 1.0);
        shadow_adam.step(sp.values(), collect(tape.backward(loss), v, sp.layout_ptr()).values());
      }
      {
        Tape<double> tape;
        auto v = bind(tape, sp, false);
        Var mu = tape.input(r.trigger.mu.reshaped(batch_mu), true);
        Var g = tape.clip(tape.add(tape.constant(images), tape.tile_batch(mu, b.size())), 0.0, 1.0);
        Var loss = tape.cross_entropy(shadow.build(tape, v, g).logits, targets);
        trigger_adam.step(r.trigger.mu.data(), tape.backward(loss)[mu].data());
        r.trigger.project();
      }
    }
    require(tp.all_finite() && sp.all_finite(), ErrorCode::kDivergence, "adba: parameters became non-finite");
  }
  r.teacher.set_params(std::move(tp));
  return r;
}

double adba_hinge(std::span<const double> logits, std::size_t truth, std::size_t target, double margin) {
  require(truth < logits.size() && target < logits.size(), ErrorCode::kInvalidArgument, "adba_hinge: bad label");
  return std::max(logits[target] + margin - logits[truth], 0.0);
}

Network adba_ft(const Network& teacher, const Trigger& trigger, const Dataset& train, const AdbaFtConfig& cfg) {
  require(cfg.eta >= 0.0, ErrorCode::kInvalidArgument, "adba_ft: eta must be non-negative");
  require(cfg.margin > 0.0, ErrorCode::kInvalidArgument, "adba_ft: margin must be positive");
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "adba_ft: batch_size must be at least 1");
  ParamVector p = teacher.params();
  const auto& entries = p.layout().entries();
  std::size_t frozen = 0;
  if (cfg.last_layer_only) {
    require(entries.size() >= 2, ErrorCode::kValidation, "adba_ft: network has no trainable head");
    frozen = entries[entries.size() - 2].offset;
  }
  Adam adam(cfg.lr);
  const std::size_t target = trigger.target;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const Batch& b : batches(train, cfg.batch_size, cfg.seed, epoch)) {
      Tape<double> tape;
      auto v = bind(tape, p, true);
      const auto labels = train.labels(b);
      Var loss = tape.cross_entropy(teacher.build(tape, v, tape.constant(train.images(b))).logits, labels);
      Batch others;
      std::vector<std::size_t> truth;
      for (std::size_t k = 0; k < b.size(); ++k)
        if (labels[k] != target) {
          others.push_back(b[k]);
          truth.push_back(labels[k]);
        }
      if (cfg.eta > 0.0 && !others.empty()) {
        Var z = teacher.build(tape, v, tape.constant(inject(train.images(others), trigger))).logits;
        const std::vector<std::size_t> targets(others.size(), target);
        Var gap = tape.sub(tape.gather(z, targets), tape.gather(z, truth));
        Var hinge = tape.relu(tape.add(gap, tape.constant(Tensor({others.size()}, cfg.margin))));
        loss = tape.add(loss, tape.scale(tape.mean(hinge), cfg.eta));
      }
      ParamVector grad = collect(tape.backward(loss), v, p.layout_ptr());
      std::fill_n(grad.values().begin(), frozen, 0.0);
      adam.step(p.values(), grad.values());
    }
    require(p.all_finite(), ErrorCode::kDivergence, "adba_ft: parameters became non-finite");
  }
  Network out = teacher;
  out.set_params(std::move(p));
  return out;
}

Dataset badnets_poison(const Dataset& train, const Trigger& trigger, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate <= 1.0, ErrorCode::kInvalidArgument, "badnets_poison: rate must be in [0, 1]");
  Batch pool;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.label(i) != trigger.target) pool.push_back(i);
  Rng rng(derive_seed(seed, 11));
  rng.shuffle(std::span<std::size_t>(pool));
  pool.resize(static_cast<std::size_t>(std::llround(rate * static_cast<double>(pool.size()))));

  std::vector<double> pixels(train.pixels().begin(), train.pixels().end());
  std::vector<std::size_t> labels = train.labels();
  const std::size_t px = train.pixels_per_image();
  for (std::size_t i : pool) {
    inject_into(std::span<double>(pixels).subspan(i * px, px), trigger);
    labels[i] = trigger.target;
  }
  return Dataset(train.classes(), train.height(), train.width(), std::move(pixels), std::move(labels), train.seed());
}

}  // namespace dlab
