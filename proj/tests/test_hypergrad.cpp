// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "dlab/hypergrad.hpp"
#include "support.hpp"

using namespace dlab;
using testing::ScalarBilevel;

namespace {

const BatchStream kStream{Batch{0}};
const Batch kSubset{0};

// Bilevel problem assembled from two functors over vector parameters.
template <class Inner, class Outer>
class FnBilevel final : public BilevelProblem {
 public:
  FnBilevel(std::size_t n, Inner in, Outer out, double omega0 = 0.0)
      : in_(in), out_(out), layout_(testing::make_layout({{"p", {n}}})), omega0_(omega0) {}

  ParamVector vec(std::vector<double> v) const { return ParamVector(layout_, std::move(v)); }

  Var inner_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return in_(t, w[0], l[0]);
  }
  Var inner_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return in_(t, w[0], l[0]);
  }
  Var outer_loss(Tape<double>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return out_(t, w[0], l[0]);
  }
  Var outer_loss(Tape<Dual>& t, std::span<const Var> w, std::span<const Var> l, const Batch&) const override {
    return out_(t, w[0], l[0]);
  }
  ParamVector initial_inner(std::uint64_t) const override {
    return ParamVector(layout_, std::vector<double>(layout_->total(), omega0_));
  }

 private:
  Inner in_;
  Outer out_;
  std::shared_ptr<const ParamLayout> layout_;
  double omega0_;
};

template <class Inner, class Outer>
FnBilevel<Inner, Outer> fn_bilevel(std::size_t n, Inner in, Outer out, double omega0 = 0.0) {
  return FnBilevel<Inner, Outer>(n, in, out, omega0);
}

template <class S>
Var half_sq(Tape<S>& t, Var a) {
  return t.scale(t.sum(t.mul(a, a)), 0.5);
}

HypergradConfig config(std::size_t T, std::size_t K, double eps) {
  HypergradConfig c;
  c.T = T;
  c.K = K;
  c.inner_rate = eps;
  return c;
}

}  // namespace

TEST_CASE("inner solve on a quadratic") {
  ScalarBilevel p(1.0);
  CHECK(inner_solve(p, p.scalar(2.5), p.scalar(0.0), config(1, 1, 1.0), kStream)[0] == doctest::Approx(2.5));
  CHECK(inner_solve(p, p.scalar(1.0), p.scalar(0.0), config(3, 1, 0.5), kStream)[0] == doctest::Approx(0.875));
  CHECK_THROWS_AS(inner_solve(p, p.scalar(1.0), p.scalar(0.0), config(0, 1, 0.5), kStream), Error);
}

TEST_CASE("outer partials") {
  auto p = fn_bilevel(
      2, [](auto& t, Var w, Var) { return half_sq(t, w); }, [](auto& t, Var, Var l) { return half_sq(t, l); });
  const auto parts = outer_partials(p, p.vec({0.3, -1.0}), p.vec({1.5, 2.0}), kSubset);
  CHECK(parts.g_omega.is_zero());
  CHECK(parts.g_lambda == p.vec({1.5, 2.0}));
  CHECK(parts.value == doctest::Approx(0.5 * (1.5 * 1.5 + 4.0)));

  ScalarBilevel q(2.0, 0.7);
  const auto fd = finite_diff_grad([&](const ParamVector& l) { return outer_value(q, q.scalar(0.4), l, kSubset); },
                                   q.scalar(1.3));
  CHECK(outer_partials(q, q.scalar(0.4), q.scalar(1.3), kSubset).g_lambda[0] == doctest::Approx(fd[0]).epsilon(1e-8));
}

TEST_CASE("phi jvp in omega") {
  auto p = fn_bilevel(
      3, [](auto& t, Var w, Var) { return half_sq(t, w); }, [](auto& t, Var w, Var) { return half_sq(t, w); });
  const ParamVector w = p.vec({0.1, 0.2, 0.3}), l = p.vec({0, 0, 0}), v = p.vec({1.0, -2.0, 4.0});
  for (auto backend : {HvpBackend::kFiniteDiff, HvpBackend::kExact}) {
    const ParamVector out = phi_jvp_omega(p, w, l, v, 0.5, kSubset, backend);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(v[i] / 2).epsilon(1e-8));
    CHECK(phi_jvp_omega(p, w, l, ParamVector::zeros_like(v), 0.5, kSubset, backend).is_zero());
  }
}

TEST_CASE("phi jvp backends agree on networks") {
  testing::NetBilevel p(3, 0.1);
  const ParamVector w = p.initial_inner(4);
  const ParamVector v = testing::random_params(w.layout_ptr(), 5);
  const Batch all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  CHECK(relative_error(phi_jvp_omega(p, w, p.teacher_params(), v, 0.3, all, HvpBackend::kFiniteDiff),
                       phi_jvp_omega(p, w, p.teacher_params(), v, 0.3, all, HvpBackend::kExact)) < 1e-3);
}

TEST_CASE("phi vjp in lambda") {
  auto separable = fn_bilevel(
      2, [](auto& t, Var w, Var l) { return t.add(half_sq(t, w), half_sq(t, l)); },
      [](auto& t, Var w, Var) { return half_sq(t, w); });
  const ParamVector a = separable.vec({0.3, 0.4}), b = separable.vec({1.0, -1.0});
  CHECK(phi_vjp_lambda(separable, a, b, separable.vec({2.0, 3.0}), 0.1, kSubset).is_zero());

  auto bilinear = fn_bilevel(
      2, [](auto& t, Var w, Var l) { return t.sum(t.mul(w, l)); }, [](auto& t, Var w, Var) { return half_sq(t, w); });
  const ParamVector v = bilinear.vec({2.0, -3.0});
  for (auto backend : {HvpBackend::kFiniteDiff, HvpBackend::kExact}) {
    const ParamVector out = phi_vjp_lambda(bilinear, a, b, v, 0.1, kSubset, backend);
    CHECK(out[0] == doctest::Approx(-0.2).epsilon(1e-8));
    CHECK(out[1] == doctest::Approx(0.3).epsilon(1e-8));
  }

  ScalarBilevel s(2.0);
  for (auto backend : {HvpBackend::kFiniteDiff, HvpBackend::kExact})
    CHECK(phi_vjp_lambda(s, s.scalar(0.7), s.scalar(1.0), s.scalar(1.0), 0.1, kSubset, backend)[0] ==
          doctest::Approx(0.2).epsilon(1e-8));
}

TEST_CASE("neumann series") {
  ScalarBilevel p(2.0);
  const ParamVector w = p.scalar(0.0), l = p.scalar(1.0), g = p.scalar(1.0);
  CHECK(neumann_v(p, w, l, g, 1, 1.0, kSubset)[0] == doctest::Approx(1.0));
  CHECK(neumann_v(p, w, l, g, 7, 1.0, kSubset)[0] == doctest::Approx(1.0));
  CHECK(neumann_v(p, w, l, g, 3, 0.5, kSubset)[0] == doctest::Approx(1.75).epsilon(1e-9));
  double prev = 0.0;
  for (std::size_t K = 1; K <= 40; ++K) {
    const double v = neumann_v(p, w, l, g, K, 0.5, kSubset)[0];
    CHECK(v > prev);
    CHECK(v < 2.0 + 1e-9);
    prev = v;
  }
  CHECK(prev == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("neumann divergence guard") {
  ScalarBilevel p(2.0);
  try {
    neumann_v(p, p.scalar(0.0), p.scalar(1.0), p.scalar(1.0), 60, 3.0, kSubset);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDivergence);
    CHECK(std::string(e.what()).find("spectral radius") != std::string::npos);
  }
}

TEST_CASE("scalar hypergradient oracle") {
  ScalarBilevel p(2.0);
  const auto r = hypergradient(p, p.scalar(1.0), config(40, 40, 0.5), kStream, kSubset, 0);
  CHECK(std::abs(r.grad[0] - 4.0) < 1e-3);
}

TEST_CASE("hypergradient error decays geometrically in K") {
  ScalarBilevel p(2.0);
  auto err = [&](std::size_t K) {
    return std::abs(hypergradient(p, p.scalar(1.0), config(60, K, 0.5), kStream, kSubset, 0).grad[0] - 4.0);
  };
  const double expected = std::pow(0.5, 10);
  for (std::size_t K : {5, 10, 20}) {
    const double ratio = err(K + 10) / err(K);
    CHECK(ratio > 0.8 * expected);
    CHECK(ratio < 1.2 * expected);
  }
}

TEST_CASE("degenerate hypergradients") {
  auto constant = fn_bilevel(
      2, [](auto& t, Var w, Var l) { return t.add(half_sq(t, w), t.sum(t.mul(w, l))); },
      [](auto& t, Var, Var) { return t.constant(Tensor({1}, 3.0)); });
  CHECK(hypergradient(constant, constant.vec({1, 2}), config(5, 5, 0.5), kStream, kSubset, 0).grad.is_zero());

  auto separable = fn_bilevel(
      2, [](auto& t, Var w, Var l) { return t.add(half_sq(t, w), half_sq(t, l)); },
      [](auto& t, Var w, Var l) { return t.add(half_sq(t, w), t.scale(t.sum(l), 2.0)); }, 1.0);
  const auto r = hypergradient(separable, separable.vec({0.5, -0.5}), config(5, 10, 0.3), kStream, kSubset, 0);
  CHECK(r.grad == r.partials.g_lambda);
}

TEST_CASE("unrolled oracle on the scalar problem") {
  ScalarBilevel p(2.0);
  for (std::size_t T : {1, 3, 8}) {
    const double c = 1.0 - std::pow(0.5, static_cast<double>(T));
    const double analytic = 4.0 * 1.3 * c * c;
    CHECK(unrolled_oracle(p, p.scalar(1.3), config(T, 1, 0.5), kStream, kSubset, 0)[0] ==
          doctest::Approx(analytic).epsilon(1e-12));
  }
}

TEST_CASE("one-step unrolled oracle equals the chain rule") {
  testing::NetBilevel p(2, 0.1);
  const Batch all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  const BatchStream stream{all};
  const ParamVector& l = p.teacher_params();
  const ParamVector w0 = p.initial_inner(9);
  const ParamVector w1 = inner_solve(p, l, w0, config(1, 1, 0.2), stream);
  const auto parts = outer_partials(p, w1, l, all);
  const ParamVector hand = parts.g_lambda + phi_vjp_lambda(p, w0, l, parts.g_omega, 0.2, all, HvpBackend::kExact);
  CHECK(relative_error(unrolled_oracle(p, l, config(1, 1, 0.2), stream, all, 9), hand) < 1e-9);
}

TEST_CASE("hypergradient tracks the unrolled oracle on networks") {
  const Batch all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  const BatchStream stream{all};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    testing::NetBilevel p(seed, 4.0);
    const auto cfg = config(5, 50, 0.2);
    const auto hg = hypergradient(p, p.teacher_params(), cfg, stream, all, seed);
    CHECK(cosine_similarity(hg.grad, unrolled_oracle(p, p.teacher_params(), cfg, stream, all, seed)) > 0.99);
  }
}

TEST_CASE("hypergradient is deterministic") {
  testing::NetBilevel p(1, 1.0);
  const Batch all{0, 1, 2, 3, 4, 5};
  const BatchStream stream{Batch{0, 1, 2}, Batch{3, 4, 5}};
  const auto a = hypergradient(p, p.teacher_params(), config(4, 10, 0.5), stream, all, 3);
  const auto b = hypergradient(p, p.teacher_params(), config(4, 10, 0.5), stream, all, 3);
  CHECK(a.grad == b.grad);
}
