// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "dlab/derivatives.hpp"
#include "dlab/hypergrad.hpp"
#include "dlab/network.hpp"
#include "dlab/params.hpp"
#include "dlab/rng.hpp"

namespace dlab::testing {

inline ParamVector random_params(std::shared_ptr<const ParamLayout> layout, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  ParamVector p(std::move(layout));
  for (double& x : p.values()) x = scale * rng.normal();
  return p;
}

inline std::shared_ptr<const ParamLayout> make_layout(std::initializer_list<std::pair<const char*, Shape>> entries) {
  auto layout = std::make_shared<ParamLayout>();
  for (const auto& [name, shape] : entries) layout->add(name, shape);
  return layout;
}

// A seeded random composition of every tape primitive, reduced to a scalar.
class RandomGraph final : public Objective {
 public:
  explicit RandomGraph(std::uint64_t seed) : seed_(seed) {
    layout_ = make_layout({{"x", {4, 6}},
                           {"w", {6, 5}},
                           {"b", {5}},
                           {"t", {4, 5}},
                           {"img", {1, 1, 5, 5}},
                           {"k", {2, 1, 3, 3}},
                           {"kb", {2}}});
    Rng rng(seed);
    for (bool& f : use_) f = rng.uniform() < 0.6;
    use_[0] = true;
    activation_ = rng.below(4);
    tau_ = rng.uniform(0.5, 3.0);
    for (std::size_t i = 0; i < 4; ++i) labels_.push_back(rng.below(5));
    at_ = random_params(layout_, derive_seed(seed, 1), 0.8);
  }

  const ParamVector& at() const { return at_; }

  Var build(Tape<double>& tape, std::span<const Var> p) const override { return impl(tape, p); }
  Var build(Tape<Dual>& tape, std::span<const Var> p) const override { return impl(tape, p); }

 private:
  template <class S>
  Var impl(Tape<S>& tape, std::span<const Var> p) const {
    Var h = tape.add_bias(tape.matmul(p[0], p[1]), p[2]);
    switch (activation_) {
      case 1: h = tape.relu(h); break;
      case 2: h = tape.sigmoid(h); break;
      case 3: h = tape.clip(h, -0.7, 0.9); break;
      default: break;
    }
    Var loss = tape.cross_entropy(h, labels_);
    if (use_[1]) loss = tape.add(loss, tape.kl_logits(h, p[3], tau_));
    if (use_[2]) loss = tape.add(loss, tape.mse(h, p[3]));
    if (use_[3]) loss = tape.add(loss, tape.scale(tape.l1(tape.sub(h, p[3])), 0.1));
    if (use_[4]) {
      Var c = tape.relu(tape.conv2d(p[4], p[5], p[6]));
      Var flat = tape.reshape(c, {1, 18});
      Var tiled = tape.tile_batch(flat, 3);
      loss = tape.add(loss, tape.scale(tape.sum(tape.mul(tiled, tiled)), 0.05));
    }
    if (use_[5]) {
      Var rn = tape.row_normalize(h);
      loss = tape.add(loss, tape.mean(tape.matmul(rn, tape.transpose(rn))));
    }
    if (use_[6]) {
      const Var parts[] = {tape.slice_rows(h, 2, 4), tape.slice_rows(h, 0, 2)};
      Var lsm = tape.log_softmax(tape.concat_rows(parts));
      loss = tape.sub(loss, tape.scale(tape.sum(tape.gather(lsm, labels_)), 0.25));
    }
    if (use_[7]) loss = tape.add(loss, tape.scale(tape.mean(tape.mul(h, p[3])), 0.5));
    return loss;
  }

  std::uint64_t seed_;
  std::shared_ptr<const ParamLayout> layout_;
  bool use_[8] = {};
  std::uint64_t activation_ = 0;
  double tau_ = 1.0;
  std::vector<std::size_t> labels_;
  ParamVector at_;
};

// Cross-entropy of a relu network on a fixed random batch.
class NetLoss final : public Objective {
 public:
  NetLoss(const Architecture& arch, std::uint64_t seed) : net_(Network::init(arch, seed)) {
    Rng rng(derive_seed(seed, 1));
    Shape shape = arch.input;
    shape.insert(shape.begin(), 8);
    x_ = Tensor(shape);
    for (double& v : x_.data()) v = rng.uniform();
    for (std::size_t i = 0; i < 8; ++i) labels_.push_back(rng.below(arch.class_count));
  }

  const ParamVector& at() const { return net_.params(); }

  Var build(Tape<double>& tape, std::span<const Var> p) const override { return impl(tape, p); }
  Var build(Tape<Dual>& tape, std::span<const Var> p) const override { return impl(tape, p); }

 private:
  template <class S>
  Var impl(Tape<S>& tape, std::span<const Var> p) const {
    return tape.cross_entropy(net_.build(tape, p, tape.constant(x_)).logits, labels_);
  }

  Network net_;
  Tensor x_;
  std::vector<std::size_t> labels_;
};

// L_in = 1/2 (w - a l)^2, L_out = 1/2 w^2 (plus an optional c/2 l^2).
class ScalarBilevel final : public BilevelProblem {
 public:
  explicit ScalarBilevel(double a, double outer_lambda_weight = 0.0, double omega0 = 0.0)
      : a_(a), c_(outer_lambda_weight), omega0_(omega0), layout_(make_layout({{"s", {1}}})) {}

  ParamVector scalar(double v) const { return ParamVector(layout_, {v}); }

  Var inner_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return inner(t, w, l);
  }
  Var inner_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return inner(t, w, l);
  }
  Var outer_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return outer(t, w, l);
  }
  Var outer_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return outer(t, w, l);
  }
  ParamVector initial_inner(std::uint64_t) const override { return scalar(omega0_); }

 private:
  template <class S>
  Var inner(Tape<S>& t, std::span<const Var> w, std::span<const Var> l) const {
    Var d = t.sub(w[0], t.scale(l[0], a_));
    return t.scale(t.sum(t.mul(d, d)), 0.5);
  }
  template <class S>
  Var outer(Tape<S>& t, std::span<const Var> w, std::span<const Var> l) const {
    Var out = t.scale(t.sum(t.mul(w[0], w[0])), 0.5);
    if (c_ != 0.0) out = t.add(out, t.scale(t.sum(t.mul(l[0], l[0])), 0.5 * c_));
    return out;
  }

  double a_, c_, omega0_;
  std::shared_ptr<const ParamLayout> layout_;
};

// Two-layer networks on both levels: the inner net fits the outer net's
// logits under weight decay rho. The outer loss is the inner net's CE, plus
// the outer net's CE when `direct` is set.
class NetBilevel final : public BilevelProblem {
 public:
  NetBilevel(std::uint64_t seed, double rho, bool direct = false)
      : rho_(rho),
        direct_(direct),
        teacher_(Network::init(parse_architecture("dense(6,8) relu dense(8,3)", {6}, 3), derive_seed(seed, 1))),
        student_(Network::init(parse_architecture("dense(6,5) relu dense(5,3)", {6}, 3), derive_seed(seed, 2))) {
    Rng rng(derive_seed(seed, 3));
    x_ = Tensor({12, 6});
    for (double& v : x_.data()) v = rng.normal();
    for (std::size_t i = 0; i < 12; ++i) labels_.push_back(rng.below(3));
  }

  const ParamVector& teacher_params() const { return teacher_.params(); }

  Var inner_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const override {
    return inner(t, w, l, b);
  }
  Var inner_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const override {
    return inner(t, w, l, b);
  }
  Var outer_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const override {
    return outer(t, w, l, b);
  }
  Var outer_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const override {
    return outer(t, w, l, b);
  }
  ParamVector initial_inner(std::uint64_t seed) const override {
    return Network::init(student_.architecture(), seed).params();
  }

 private:
  template <class S>
  Var rows(Tape<S>& t, const Batch& b) const {
    std::vector<double> out;
    for (std::size_t i : b)
      for (std::size_t j = 0; j < 6; ++j) out.push_back(x_[i * 6 + j]);
    return t.constant(Tensor({b.size(), 6}, std::move(out)));
  }
  std::vector<std::size_t> labels(const Batch& b) const {
    std::vector<std::size_t> out;
    for (std::size_t i : b) out.push_back(labels_[i]);
    return out;
  }
  template <class S>
  Var inner(Tape<S>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const {
    Var x = rows(t, b);
    Var fit = t.mse(student_.build(t, w, x).logits, teacher_.build(t, l, x).logits);
    Var decay = t.constant(Tensor({1}, 0.0));
    for (Var v : w) decay = t.add(decay, t.sum(t.mul(v, v)));
    return t.add(fit, t.scale(decay, 0.5 * rho_));
  }
  template <class S>
  Var outer(Tape<S>& t, std::span<const Var> w, std::span<const Var> l, const Batch& b) const {
    Var x = rows(t, b);
    const auto y = labels(b);
    Var loss = t.cross_entropy(student_.build(t, w, x).logits, y);
    if (direct_) loss = t.add(loss, t.cross_entropy(teacher_.build(t, l, x).logits, y));
    return loss;
  }

  double rho_;
  bool direct_;
  Network teacher_;
  Network student_;
  Tensor x_;
  std::vector<std::size_t> labels_;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dlab::testing
