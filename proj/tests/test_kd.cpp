// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "dlab/derivatives.hpp"
#include "dlab/distill.hpp"
#include "support.hpp"

using namespace dlab;

TEST_CASE("response loss examples") {
  const Tensor a({2, 3}, {0.1, 0.7, -0.3, 1.0, 2.0, 0.5});
  CHECK(loss_response(a, a) == doctest::Approx(0.0).epsilon(1e-15));

  // teacher softmax of [ln2, 0, 0] is [1/2, 1/4, 1/4]; student uniform.
  const Tensor t({1, 3}, {std::log(2.0), 0.0, 0.0}), s({1, 3}, 0.0);
  const double kl = 0.5 * std::log(0.5 * 3) + 2 * 0.25 * std::log(0.25 * 3);
  CHECK(loss_response(s, t) == doctest::Approx(kl).epsilon(1e-12));

  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Tensor x({3, 4}), y({3, 4});
    for (double& v : x.data()) v = 3 * rng.normal();
    for (double& v : y.data()) v = 3 * rng.normal();
    CHECK(loss_response(x, y, rng.uniform(0.5, 4.0)) >= 0.0);
  }
}

TEST_CASE("response loss gradient matches finite differences") {
  auto layout = testing::make_layout({{"s", {3, 4}}});
  const Tensor teacher({3, 4}, {0.2, -1.0, 0.4, 2.0, 1.1, 0.0, -0.5, 0.3, -2.0, 1.0, 0.6, 0.1});
  auto obj = make_objective([&](auto& tape, std::span<const Var> p) {
    return response_loss(tape, p[0], tape.constant(teacher), 2.0);
  });
  const ParamVector at = testing::random_params(layout, 3);
  CHECK(relative_error(gradient(obj, at), finite_diff_grad(obj, at)) < 1e-5);
}

TEST_CASE("feature loss examples") {
  const Tensor f({2, 3}, {0.5, -1.0, 2.0, 0.0, 0.3, 1.2});
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(loss_feature(f, f, &eye) == 0.0);
  Tensor f2 = f;
  for (double& v : f2.data()) v *= 2.0;
  const Tensor zero({2, 3}, 0.0);
  CHECK(loss_feature(f2, zero) == doctest::Approx(4.0 * loss_feature(f, zero)));
  double ms = 0.0;
  for (double v : f.data()) ms += v * v / 6.0;
  CHECK(loss_feature(f, zero, &eye) == doctest::Approx(ms));
}

TEST_CASE("relation loss examples") {
  const Tensor f({3, 2}, {1.0, 2.0, -0.5, 0.3, 0.0, 0.0});
  CHECK(loss_relation(f, f) == 0.0);
  Tensor scaled = f;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) scaled[i * 2 + j] *= 1.0 + static_cast<double>(i);
  CHECK(loss_relation(scaled, f) == doctest::Approx(0.0).scale(1.0));
  const Tensor orth({2, 2}, {1, 0, 0, 1}), same({2, 2}, {1, 1, 1, 1});
  CHECK(loss_relation(orth, same) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kd method names") {
  for (auto m : {KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation})
    CHECK(parse_kd_method(kd_method_name(m)) == m);
  CHECK_THROWS_AS(parse_kd_method("attention"), Error);
}

namespace {

struct Small {
  Dataset train = gen_synthetic(3, 20, 8, 8, 0.1, 5);
  Shape in{1, 8, 8};
};

}  // namespace

TEST_CASE("zero epochs leave parameters unchanged") {
  Small s;
  const Network n = Network::init(student_architecture(s.in, 3), 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(train_benign(n, s.train, cfg).params() == n.params());
}

TEST_CASE("benign training is deterministic and decreases the loss") {
  Small s;
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 3;
  LossHistory h1, h2;
  const Network a = train_benign(Network::init(student_architecture(s.in, 3), 1), s.train, cfg, &h1);
  const Network b = train_benign(Network::init(student_architecture(s.in, 3), 1), s.train, cfg, &h2);
  CHECK(a.params() == b.params());
  REQUIRE(h1.size() == 6);
  for (std::size_t e = 1; e < h1.size(); ++e) CHECK(h1[e] <= h1[e - 1] * 1.05);
}

TEST_CASE("delta zero reduces to benign training") {
  Small s;
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 8;
  const Network teacher = train_benign(Network::init(teacher_architecture(s.in, 3), 2), s.train, tc);
  for (auto m : {KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation}) {
    DistillConfig dc;
    dc.method = m;
    dc.delta = 0.0;
    dc.epochs = 3;
    dc.seed = 8;
    const Network init = Network::init(student_architecture(s.in, 3), 4);
    CHECK(distill(teacher, init, s.train, dc).params() == train_benign(init, s.train, tc).params());
  }
}

TEST_CASE("distilled students learn") {
  Small s;
  TrainConfig tc;
  tc.epochs = 30;
  const Network teacher = train_benign(Network::init(teacher_architecture(s.in, 3), 2), s.train, tc);
  CHECK(accuracy(teacher, s.train) > 0.9);
  for (auto m : {KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation}) {
    DistillConfig dc;
    dc.method = m;
    dc.epochs = 30;
    const Network st = distill(teacher, Network::init(student_architecture(s.in, 3), 4), s.train, dc);
    CHECK(accuracy(st, s.train) > 0.9);
  }
}

TEST_CASE("attack success rate excludes the target class") {
  Small s;
  Network n = Network::init(student_architecture(s.in, 3), 1);
  ParamVector p = ParamVector::zeros_like(n.params());
  p[p.size() - 3 + 2] = 5.0;  // output bias: always class 2
  n.set_params(p);
  CHECK(attack_success_rate(n, s.train, Trigger::zeros(s.in, 0.2, 2)) == 1.0);
  CHECK(attack_success_rate(n, s.train, Trigger::zeros(s.in, 0.2, 0)) == 0.0);
  CHECK(accuracy(n, s.train) == doctest::Approx(1.0 / 3.0));
}
