// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "dlab/derivatives.hpp"
#include "dlab/network.hpp"
#include "support.hpp"

using namespace dlab;
using dlab::testing::make_layout;

TEST_CASE("add records one op") {
  auto e = evaluate([](Tape<double>& t, std::span<const Var> in) { return std::vector<Var>{t.add(in[0], in[1])}; },
                    {Tensor({2}, {1, 2}), Tensor({2}, {3, 4})});
  CHECK(e.values()[0] == Tensor({2}, {4, 6}));
  CHECK(e.tape.size() == 3);
  CHECK(e.tape.record(2).op == Op::kAdd);
}

TEST_CASE("identity matmul") {
  auto e = evaluate(
      [](Tape<double>& t, std::span<const Var> in) { return std::vector<Var>{t.matmul(in[0], in[1])}; },
      {Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2, 3}, {1, 2, 3, 4, 5, 6})});
  CHECK(e.values()[0] == Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
}

TEST_CASE("cross entropy of uniform logits") {
  Tape<double> t;
  Var z = t.input(Tensor({1, 3}, 0.0), true);
  const std::size_t label[] = {1};
  Var ce = t.cross_entropy(z, label);
  CHECK(t.value(ce)[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("shape mismatch names the op") {
  Tape<double> t;
  Var a = t.input(Tensor({2}), true), b = t.input(Tensor({3}), true);
  try {
    t.add(a, b);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShape);
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("non-finite external input is rejected") {
  CHECK_THROWS_AS(tensor_from_external({2}, {1.0, NAN}), Error);
  CHECK_THROWS_AS(evaluate([](Tape<double>&, std::span<const Var> in) { return std::vector<Var>(in.begin(), in.end()); },
                           {Tensor({1}, {INFINITY})}),
                  Error);
}

TEST_CASE("square gradient") {
  Tape<double> t;
  Var x = t.input(Tensor({1}, 3.0), true);
  auto g = t.backward(t.sum(t.mul(x, x)));
  CHECK(g[x][0] == doctest::Approx(6.0));
}

TEST_CASE("softmax cross entropy gradient") {
  Tape<double> t;
  const Tensor z0({1, 4}, {0.3, -1.2, 2.0, 0.5});
  Var z = t.input(z0, true);
  const std::size_t label[] = {2};
  auto g = t.backward(t.cross_entropy(z, label));
  double norm = 0.0;
  for (std::size_t j = 0; j < 4; ++j) norm += std::exp(z0[j]);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(g[z][j] == doctest::Approx(std::exp(z0[j]) / norm - (j == 2 ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("untouched parameters get zero gradient") {
  Tape<double> t;
  Var a = t.input(Tensor({2}, 1.0), true), b = t.input(Tensor({2}, 5.0), true);
  auto g = t.backward(t.sum(a));
  CHECK(g[b] == Tensor({2}, 0.0));
}

TEST_CASE("backward on a foreign tape fails") {
  Tape<double> t1, t2;
  Var x = t1.input(Tensor({1}, 1.0), true);
  Var y = t1.sum(x);
  CHECK_THROWS_AS(t2.backward(y), Error);
}

TEST_CASE("random two-layer net gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    testing::NetLoss loss(parse_architecture("dense(6,7) relu dense(7,3)", {6}, 3), seed);
    CHECK(relative_error(gradient(loss, loss.at()), finite_diff_grad(loss, loss.at())) < 1e-5);
  }
}

TEST_CASE("conv net gradient matches finite differences") {
  testing::NetLoss loss(parse_architecture("conv2d(1,2,3) relu flatten dense(*,3)", {1, 5, 5}, 3), 4);
  CHECK(relative_error(gradient(loss, loss.at()), finite_diff_grad(loss, loss.at())) < 1e-5);
}

TEST_CASE("random graphs match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    testing::RandomGraph g(seed);
    CAPTURE(seed);
    CHECK(relative_error(gradient(g, g.at()), finite_diff_grad(g, g.at())) < 1e-5);
  }
}

TEST_CASE("backward is linear in the seed") {
  Tape<double> t;
  Var x = t.input(Tensor({2, 3}, {0.1, -0.4, 0.9, 1.3, -0.2, 0.5}), true);
  Var w = t.input(Tensor({3, 2}, {0.3, 0.2, -0.7, 0.1, 0.5, -0.6}), true);
  Var y = t.sigmoid(t.matmul(x, w));
  const Tensor s1({2, 2}, {1, 0, 2, -1}), s2({2, 2}, {0.5, 3, -1, 1});
  Tensor mix({2, 2});
  for (std::size_t i = 0; i < 4; ++i) mix[i] = 2.0 * s1[i] - 3.0 * s2[i];
  auto g1 = t.backward(y, s1), g2 = t.backward(y, s2), gm = t.backward(y, mix);
  for (std::size_t i = 0; i < 6; ++i) CHECK(gm[x][i] == doctest::Approx(2.0 * g1[x][i] - 3.0 * g2[x][i]).epsilon(1e-12));
}

TEST_CASE("replay reproduces recorded values bit-exactly") {
  testing::RandomGraph g(7);
  Tape<double> t;
  auto vars = bind(t, g.at(), true);
  g.build(t, vars);
  const auto replayed = t.replay();
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(replayed[i] == t.record(i).value);
}

TEST_CASE("relu and clip subgradients") {
  Tape<double> t;
  Var x = t.input(Tensor({3}, {0.0, -1.0, 2.0}), true);
  auto g = t.backward(t.sum(t.relu(x)));
  CHECK(g[x] == Tensor({3}, {0.0, 0.0, 1.0}));
  Tape<double> t2;
  Var y = t2.input(Tensor({3}, {-2.0, 0.5, 2.0}), true);
  auto g2 = t2.backward(t2.sum(t2.clip(y, 0.0, 1.0)));
  CHECK(g2[y] == Tensor({3}, {0.0, 1.0, 0.0}));
}

namespace {

struct Quadratic {
  template <class S>
  Var operator()(Tape<S>& t, std::span<const Var> p) const {
    Var a = t.constant(Tensor({2, 2}, {2, 0, 0, 4}));
    Var col = t.reshape(p[0], {2, 1});
    return t.scale(t.sum(t.mul(col, t.matmul(a, col))), 0.5);
  }
};

}  // namespace

TEST_CASE("hvp of a quadratic") {
  auto obj = make_objective(Quadratic{});
  auto layout = make_layout({{"theta", {2}}});
  const ParamVector at(layout, {0.3, -1.1}), v(layout, {1.0, 1.0});
  for (auto backend : {HvpBackend::kFiniteDiff, HvpBackend::kExact}) {
    const ParamVector h = hvp(obj, at, v, backend);
    CHECK(h[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(h[1] == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(hvp(obj, at, ParamVector::zeros_like(at), backend).is_zero());
  }
}

TEST_CASE("finite difference step rule") {
  auto layout = make_layout({{"theta", {2}}});
  const ParamVector at(layout, {3.0, 4.0}), v(layout, {0.0, 2.0});
  CHECK(hvp_step(at, v) == doctest::Approx(1e-4 * 6.0 / 2.0).epsilon(1e-12));
}

TEST_CASE("hvp backends agree on random nets") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    testing::NetLoss loss(parse_architecture("dense(6,7) relu dense(7,3)", {6}, 3), seed);
    const ParamVector v = testing::random_params(loss.at().layout_ptr(), seed + 100);
    CHECK(relative_error(hvp(loss, loss.at(), v, HvpBackend::kFiniteDiff), hvp(loss, loss.at(), v, HvpBackend::kExact)) <
          1e-3);
  }
}

TEST_CASE("hvp is symmetric") {
  testing::RandomGraph g(3);
  const ParamVector u = testing::random_params(g.at().layout_ptr(), 11);
  const ParamVector v = testing::random_params(g.at().layout_ptr(), 12);
  const double a = u.dot(hvp(g, g.at(), v, HvpBackend::kExact));
  const double b = v.dot(hvp(g, g.at(), u, HvpBackend::kExact));
  CHECK(std::abs(a - b) <= 1e-6 * std::max(std::abs(a), 1.0));
}

TEST_CASE("finite difference gradient examples") {
  auto layout = make_layout({{"x", {1}}});
  const auto linear = [](const ParamVector& p) { return 3.0 * p[0]; };
  const auto cubic = [](const ParamVector& p) { return p[0] * p[0] * p[0]; };
  CHECK(std::abs(finite_diff_grad(linear, ParamVector(layout, {-7.5}))[0] - 3.0) < 1e-8);
  CHECK(std::abs(finite_diff_grad(cubic, ParamVector(layout, {2.0}))[0] - 12.0) < 1e-6);
}

TEST_CASE("param vector flatten and unflatten") {
  auto layout = make_layout({{"a", {2, 3}}, {"b", {4}}});
  CHECK(layout->total() == 10);
  CHECK(layout->entries()[1].offset == 6);
  const ParamVector p = testing::random_params(layout, 5);
  CHECK(ParamVector::flatten(layout, p.unflatten()) == p);
}

TEST_CASE("tape replay determinism across evaluations") {
  testing::RandomGraph g(9);
  const ParamVector g1 = gradient(g, g.at()), g2 = gradient(g, g.at());
  CHECK(g1 == g2);
}
