// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include "doctest.h"
#include "dlab/checkpoint.hpp"
#include "dlab/distill.hpp"
#include "dlab/trigger.hpp"

using namespace dlab;
namespace fs = std::filesystem;

TEST_CASE("inject clips to the pixel range") {
  const Tensor x({2, 1, 2, 2}, {0.95, 0.1, 0.0, 1.0, 0.5, 0.5, 0.05, 0.9});
  CHECK(inject(x, Trigger::zeros({1, 2, 2}, 0.2, 0)) == x);
  Trigger t = Trigger::zeros({1, 2, 2}, 0.2, 0);
  t.mu = Tensor({1, 2, 2}, {0.2, -0.2, -0.2, 0.2});
  const Tensor y = inject(x, t);
  CHECK(y[0] == 1.0);
  CHECK(y[2] == 0.0);
  for (double v : y.data()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("projection clamps to the bound") {
  Trigger t = Trigger::zeros({1, 2, 2}, 0.2, 0);
  t.mu = Tensor({1, 2, 2}, {0.5, -0.9, 0.1, -0.2});
  t.project();
  CHECK(t.linf() == 0.2);
  CHECK(t.mu[2] == 0.1);
}

TEST_CASE("white patch sits in the bottom-right corner") {
  const Trigger t = Trigger::white_patch({1, 4, 4}, 2, 3);
  CHECK(t.target == 3);
  const Tensor y = inject(Tensor({1, 1, 4, 4}, 0.0), t);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == ((r >= 2 && c >= 2) ? 1.0 : 0.0));
}

namespace {

struct Fixture {
  Dataset train = gen_synthetic(3, 20, 8, 8, 0.1, 5);
  Network teacher = Network::init(teacher_architecture({1, 8, 8}, 3), 1);
  Network student = Network::init(student_architecture({1, 8, 8}, 3), 2);
};

}  // namespace

TEST_CASE("zero steps return the zero trigger") {
  Fixture f;
  TriggerPretrainConfig cfg;
  cfg.steps = 0;
  const auto r = pretrain_trigger(f.teacher, f.student, f.train, cfg);
  CHECK(r.trigger.linf() == 0.0);
  CHECK(r.loss_history.empty());
}

TEST_CASE("pretraining respects the bound and lowers the loss") {
  Fixture f;
  TriggerPretrainConfig cfg;
  cfg.target = 1;
  cfg.eps0 = 0.1;
  cfg.lr = 0.05;
  cfg.steps = 100;
  cfg.batch_size = 16;
  const auto r = pretrain_trigger(f.teacher, f.student, f.train, cfg);
  CHECK(r.trigger.linf() <= 0.1);
  REQUIRE(r.loss_history.size() == 100);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 50; ++i) first += r.loss_history[i];
  for (std::size_t i = 50; i < 100; ++i) last += r.loss_history[i];
  CHECK(last <= first * 1.1);
  const auto again = pretrain_trigger(f.teacher, f.student, f.train, cfg);
  CHECK(again.trigger.mu == r.trigger.mu);
}

TEST_CASE("pretraining rejects a non-positive bound") {
  Fixture f;
  TriggerPretrainConfig cfg;
  cfg.eps0 = 0.0;
  CHECK_THROWS_AS(pretrain_trigger(f.teacher, f.student, f.train, cfg), Error);
}

TEST_CASE("trigger checkpoint roundtrip and validation") {
  const fs::path dir = fs::temp_directory_path() / "dlab_test_trigger";
  fs::create_directories(dir);
  Trigger t = Trigger::zeros({1, 3, 3}, 0.2, 2);
  t.mu[4] = -0.15;
  save_trigger(t, 4, dir / "t.ckpt");
  const Trigger u = load_trigger(dir / "t.ckpt");
  CHECK(u.mu == t.mu);
  CHECK(u.eps0 == 0.2);
  CHECK(u.target == 2);

  t.mu[0] = 0.5;  // exceeds eps0
  write_container(dir / "bad.ckpt", Container{4, "trigger;shape=1x3x3;eps0=0.2;target=2",
                                             std::vector<double>(t.mu.data().begin(), t.mu.data().end())});
  CHECK_THROWS_AS(load_trigger(dir / "bad.ckpt"), Error);
  CHECK_THROWS_AS(save_trigger(Trigger::zeros({1, 3, 3}, 0.2, 5), 4, dir / "x.ckpt"), Error);
}
