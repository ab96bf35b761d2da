// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/distill.hpp"

#include <algorithm>
#include <cmath>

#include "dlab/optim.hpp"
#include "dlab/params.hpp"
#include "dlab/rng.hpp"

namespace dlab {

std::string_view kd_method_name(KdMethod m) noexcept {
  switch (m) {
    case KdMethod::kResponse: return "response";
    case KdMethod::kFeature: return "feature";
    case KdMethod::kRelation: return "relation";
  }
  return "response";
}

KdMethod parse_kd_method(std::string_view name) {
  if (name == "response") return KdMethod::kResponse;
  if (name == "feature") return KdMethod::kFeature;
  if (name == "relation") return KdMethod::kRelation;
  fail(ErrorCode::kValidation, "unknown distillation method '" + std::string(name) + "'");
}

double loss_response(const Tensor& student_logits, const Tensor& teacher_logits, double tau) {
  require(tau > 0.0, ErrorCode::kInvalidArgument, "loss_response: tau must be positive");
  Tape<double> tape;
  Var s = tape.input(student_logits), t = tape.input(teacher_logits);
  return tape.value(response_loss(tape, s, t, tau))[0];
}

double loss_feature(const Tensor& student_feat, const Tensor& teacher_feat, const Tensor* adapter) {
  Tape<double> tape;
  Var s = tape.input(student_feat), t = tape.input(teacher_feat);
  std::optional<Var> a;
  if (adapter) a = tape.input(*adapter);
  return tape.value(feature_loss(tape, s, t, a))[0];
}

double loss_relation(const Tensor& student_feat, const Tensor& teacher_feat) {
  require(student_feat.rank() == 2 && student_feat.dim(0) >= 2, ErrorCode::kShape,
          "loss_relation: needs a batch of at least 2 rows");
  Tape<double> tape;
  Var s = tape.input(student_feat), t = tape.input(teacher_feat);
  return tape.value(relation_loss(tape, s, t))[0];
}

namespace {

Tensor gather_rows(const Tensor& all, const Batch& idx) {
  const std::size_t width = all.size() / all.dim(0);
  std::vector<double> out(idx.size() * width);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(all.ptr() + idx[k] * width, width, out.begin() + static_cast<std::ptrdiff_t>(k * width));
  return Tensor({idx.size(), width}, std::move(out));
}

void check_train(const Network& net, const Dataset& train, std::size_t batch_size, double lr) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "training: batch_size must be at least 1");
  require(lr > 0.0 && std::isfinite(lr), ErrorCode::kInvalidArgument, "training: learning rate must be positive");
  require(net.class_count() == train.classes(), ErrorCode::kValidation,
          "training: network class count does not match the dataset");
  require(net.architecture().input == train.sample_shape(), ErrorCode::kShape,
          "training: network input " + shape_string(net.architecture().input) + " does not match images " +
              shape_string(train.sample_shape()));
}

}  // namespace

Network train_benign(Network net, const Dataset& train, const TrainConfig& cfg, LossHistory* history) {
  check_train(net, train, cfg.batch_size, cfg.lr);
  Adam adam(cfg.lr);
  ParamVector params = net.params();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    const auto order = batches(train, cfg.batch_size, cfg.seed, epoch);
    for (const Batch& b : order) {
      Tape<double> tape;
      auto vars = bind(tape, params, true);
      Var x = tape.constant(train.images(b));
      const auto labels = train.labels(b);
      Var loss = tape.cross_entropy(net.build(tape, vars, x).logits, labels);
      total += tape.value(loss)[0];
      ParamVector grad = collect(tape.backward(loss), vars, params.layout_ptr());
      adam.step(params.values(), grad.values());
    }
    require(params.all_finite(), ErrorCode::kDivergence, "train_benign: parameters became non-finite");
    if (history) history->push_back(total / static_cast<double>(order.size()));
  }
  net.set_params(std::move(params));
  return net;
}

Network distill(const Network& teacher, Network student, const Dataset& train, const DistillConfig& cfg,
                LossHistory* history) {
  check_train(student, train, cfg.batch_size, cfg.lr);
  require(cfg.delta >= 0.0, ErrorCode::kInvalidArgument, "distill: delta must be non-negative");
  require(cfg.tau > 0.0, ErrorCode::kInvalidArgument, "distill: tau must be positive");
  require(teacher.class_count() == student.class_count(), ErrorCode::kValidation,
          "distill: teacher and student class counts differ");
  const bool use_kd = cfg.delta > 0.0;

  Tensor t_logits, t_feats;
  if (use_kd) {
    auto out = teacher.forward(train.all_images());
    t_logits = std::move(out.logits);
    t_feats = std::move(out.features);
  }

  const std::size_t sf = student.architecture().feature_size();
  const std::size_t tf = teacher.architecture().feature_size();
  const bool adapt = cfg.method == KdMethod::kFeature && sf != tf;
  std::vector<double> adapter;
  if (adapt) {
    Rng rng(derive_seed(cfg.seed, 0xada97e5));
    const double a = std::sqrt(6.0 / static_cast<double>(sf + tf));
    adapter.resize(sf * tf);
    for (double& w : adapter) w = rng.uniform(-a, a);
  }

  Adam adam(cfg.lr), adapter_adam(cfg.lr);
  ParamVector params = student.params();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    const auto order = batches(train, cfg.batch_size, cfg.seed, epoch);
    for (const Batch& b : order) {
      Tape<double> tape;
      auto vars = bind(tape, params, true);
      Var x = tape.constant(train.images(b));
      const auto labels = train.labels(b);
      NetworkVars out = student.build(tape, vars, x);
      Var loss = tape.cross_entropy(out.logits, labels);
      std::optional<Var> a;
      if (use_kd) {
        Var kd;
        switch (cfg.method) {
          case KdMethod::kResponse:
            kd = response_loss(tape, out.logits, tape.constant(gather_rows(t_logits, b)), cfg.tau);
            break;
          case KdMethod::kFeature:
            if (adapt) a = tape.input(Tensor({sf, tf}, adapter), true);
            kd = feature_loss(tape, out.features, tape.constant(gather_rows(t_feats, b)), a);
            break;
          case KdMethod::kRelation:
            kd = b.size() >= 2 ? relation_loss(tape, out.features, tape.constant(gather_rows(t_feats, b)))
                               : tape.constant(Tensor({1}, 0.0));
            break;
        }
        loss = tape.add(loss, tape.scale(kd, cfg.delta));
      }
      total += tape.value(loss)[0];
      auto grads = tape.backward(loss);
      ParamVector grad = collect(grads, vars, params.layout_ptr());
      adam.step(params.values(), grad.values());
      if (a) adapter_adam.step(adapter, grads[*a].data());
    }
    require(params.all_finite(), ErrorCode::kDivergence, "distill: parameters became non-finite");
    if (history) history->push_back(total / static_cast<double>(order.size()));
  }
  student.set_params(std::move(params));
  return student;
}

std::vector<std::size_t> predict(const Network& net, const Tensor& images) {
  constexpr std::size_t kChunk = 256;
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t k = std::min(kChunk, n - start);
    Shape shape = images.shape();
    shape[0] = k;
    Tensor chunk(shape, std::vector<double>(images.ptr() + start * per, images.ptr() + (start + k) * per));
    const Tensor logits = net.logits(chunk);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < k; ++i) {
      const double* row = logits.ptr() + i * c;
      out.push_back(static_cast<std::size_t>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

double accuracy(const Network& net, const Dataset& data) {
  const auto pred = predict(net, data.all_images());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.label(i);
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double attack_success_rate(const Network& net, const Dataset& data, const Trigger& trigger) {
  PoisonedView view(data, trigger, trigger.target, true);
  require(view.size() > 0, ErrorCode::kValidation, "attack_success_rate: every sample belongs to the target class");
  const auto pred = predict(net, view.all_images());
  std::size_t hit = 0;
  for (std::size_t p : pred) hit += p == trigger.target;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace dlab
