// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/trigger.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>

#include "dlab/checkpoint.hpp"
#include "dlab/dataset.hpp"
#include "dlab/network.hpp"
#include "dlab/optim.hpp"
#include "dlab/params.hpp"

namespace dlab {

Trigger Trigger::zeros(const Shape& sample_shape, double eps0, std::size_t target) {
  require(eps0 >= 0.0 && std::isfinite(eps0), ErrorCode::kInvalidArgument, "trigger: eps0 must be non-negative");
  return Trigger{Tensor(sample_shape, 0.0), eps0, target};
}

Trigger Trigger::white_patch(const Shape& sample_shape, std::size_t size, std::size_t target) {
  require(sample_shape.size() == 3, ErrorCode::kShape, "white_patch: expected a [c, h, w] sample shape");
  const std::size_t c = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
  require(size >= 1 && size <= h && size <= w, ErrorCode::kInvalidArgument, "white_patch: patch does not fit");
  Trigger t{Tensor(sample_shape, 0.0), 1.0, target};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = h - size; y < h; ++y)
      for (std::size_t x = w - size; x < w; ++x) t.mu[(ch * h + y) * w + x] = 1.0;
  return t;
}

double Trigger::linf() const {
  double m = 0.0;
  for (double v : mu.data()) m = std::max(m, std::abs(v));
  return m;
}

void Trigger::project() {
  for (double& v : mu.data()) v = std::clamp(v, -eps0, eps0);
}

void inject_into(std::span<double> image, const Trigger& trigger) {
  require(image.size() == trigger.mu.size(), ErrorCode::kShape, "inject: image size does not match trigger");
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = std::clamp(image[i] + trigger.mu[i], 0.0, 1.0);
}

Tensor inject(const Tensor& images, const Trigger& trigger) {
  require(images.rank() == trigger.mu.rank() + 1, ErrorCode::kShape,
          "inject: images " + shape_string(images.shape()) + " vs trigger " + shape_string(trigger.mu.shape()));
  Shape sample(images.shape().begin() + 1, images.shape().end());
  require(sample == trigger.mu.shape(), ErrorCode::kShape,
          "inject: images " + shape_string(images.shape()) + " vs trigger " + shape_string(trigger.mu.shape()));
  Tensor out = images;
  const std::size_t per = trigger.mu.size();
  for (std::size_t n = 0; n < images.dim(0); ++n) inject_into(out.data().subspan(n * per, per), trigger);
  return out;
}

TriggerPretrainResult pretrain_trigger(const Network& teacher, const Network& student, const Dataset& train,
                                       const TriggerPretrainConfig& cfg) {
  require(cfg.target < train.classes(), ErrorCode::kInvalidArgument, "pretrain_trigger: target out of range");
  require(cfg.batch_size >= 1, ErrorCode::kInvalidArgument, "pretrain_trigger: batch_size must be positive");
  require(cfg.eps0 > 0.0 && std::isfinite(cfg.eps0), ErrorCode::kInvalidArgument, "pretrain_trigger: eps0 must be positive");
  Batch pool;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.label(i) != cfg.target) pool.push_back(i);
  require(!pool.empty(), ErrorCode::kValidation, "pretrain_trigger: no samples outside the target class");

  TriggerPretrainResult result{Trigger::zeros(train.sample_shape(), cfg.eps0, cfg.target), {}};
  Trigger& trig = result.trigger;
  Adam adam(cfg.lr);
  Shape batch_mu = trig.mu.shape();
  batch_mu.insert(batch_mu.begin(), 1);

  std::size_t epoch = 0;
  std::vector<Batch> order;
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor >= order.size()) {
      order = batches(pool.size(), cfg.batch_size, cfg.seed, epoch++);
      cursor = 0;
    }
    Batch idx;
    for (std::size_t p : order[cursor]) idx.push_back(pool[p]);
    ++cursor;
    const std::vector<std::size_t> labels(idx.size(), cfg.target);

    Tape<double> tape;
    Var mu = tape.input(trig.mu.reshaped(batch_mu), true);
    Var x = tape.constant(train.images(idx));
    Var g = tape.clip(tape.add(x, tape.tile_batch(mu, idx.size())), 0.0, 1.0);
    auto tp = bind(tape, teacher.params(), false);
    auto sp = bind(tape, student.params(), false);
    Var lt = tape.cross_entropy(teacher.build(tape, tp, g).logits, labels);
    Var ls = tape.cross_entropy(student.build(tape, sp, g).logits, labels);
    Var loss = tape.add(lt, ls);
    result.loss_history.push_back(tape.value(loss)[0]);
    auto grads = tape.backward(loss);
    adam.step(trig.mu.data(), grads[mu].data());
    trig.project();
  }
  return result;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::string> parse_fields(std::string_view text) {
  std::map<std::string, std::string> out;
  while (!text.empty()) {
    const std::size_t semi = text.find(';');
    std::string_view field = text.substr(0, semi);
    const std::size_t eq = field.find('=');
    require(eq != std::string_view::npos, ErrorCode::kValidation, "trigger descriptor: malformed field");
    out.emplace(std::string(field.substr(0, eq)), std::string(field.substr(eq + 1)));
    if (semi == std::string_view::npos) break;
    text.remove_prefix(semi + 1);
  }
  return out;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), ErrorCode::kValidation,
          "trigger descriptor: bad integer '" + s + "'");
  return v;
}

}  // namespace

void save_trigger(const Trigger& trigger, std::size_t class_count, const std::filesystem::path& path) {
  require(trigger.target < class_count, ErrorCode::kInvalidArgument, "save_trigger: target out of range");
  std::string shape;
  for (std::size_t i = 0; i < trigger.mu.rank(); ++i) shape += (i ? "x" : "") + std::to_string(trigger.mu.dim(i));
  Container c;
  c.class_count = static_cast<std::uint32_t>(class_count);
  c.descriptor = "trigger;shape=" + shape + ";eps0=" + format_double(trigger.eps0) +
                 ";target=" + std::to_string(trigger.target);
  c.payload.assign(trigger.mu.data().begin(), trigger.mu.data().end());
  write_container(path, c);
}

Trigger load_trigger(const std::filesystem::path& path) {
  Container c = read_container(path);
  constexpr std::string_view prefix = "trigger;";
  if (c.descriptor.rfind(prefix, 0) != 0)
    fail(ErrorCode::kValidation, path.string() + ": checkpoint does not hold a trigger");
  auto fields = parse_fields(std::string_view(c.descriptor).substr(prefix.size()));
  for (const char* key : {"shape", "eps0", "target"})
    require(fields.count(key) == 1, ErrorCode::kValidation, path.string() + ": trigger descriptor lacks " + key);
  Shape shape;
  std::string_view dims = fields["shape"];
  while (true) {
    const std::size_t x = dims.find('x');
    shape.push_back(parse_size(std::string(dims.substr(0, x))));
    if (x == std::string_view::npos) break;
    dims.remove_prefix(x + 1);
  }
  require(shape_size(shape) == c.payload.size(), ErrorCode::kValidation,
          path.string() + ": payload size disagrees with the trigger shape");
  Trigger t;
  t.eps0 = std::stod(fields["eps0"]);
  t.target = parse_size(fields["target"]);
  require(t.target < c.class_count, ErrorCode::kValidation, path.string() + ": trigger target out of range");
  t.mu = Tensor(shape, std::move(c.payload));
  for (double v : t.mu.data())
    require(std::abs(v) <= t.eps0 + 1e-12, ErrorCode::kValidation, path.string() + ": trigger exceeds its bound");
  return t;
}

}  // namespace dlab
