// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dlab/pipeline.hpp"
#include "dlab/rng.hpp"

namespace dlab {

using nlohmann::json;

void ExperimentConfig::apply_seed(std::uint64_t base) {
  seed = base;
  train.seed = derive_seed(base, 1);
  trigger.seed = derive_seed(base, 2);
  scar.seed = derive_seed(base, 3);
  adba.seed = derive_seed(base, 4);
  adba_ft.seed = derive_seed(base, 5);
  distill.seed = derive_seed(base, 6);
  nc.seed = derive_seed(base, 7);
}

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad("", "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, value] : j_.items())
      if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) == keys.end())
        bad(key, "unknown field");
  }

  bool has(const char* key) const { return j_.contains(key); }
  Section sub(const char* key) const { return Section(j_.at(key), where(key)); }
  const json& raw(const char* key) const { return j_.at(key); }

  void size(const char* key, std::size_t& out, std::size_t min = 0) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) bad(key, "expected a non-negative integer");
    out = v.get<std::size_t>();
    if (out < min) bad(key, "must be at least " + std::to_string(min));
  }

  void u64(const char* key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) bad(key, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void real(const char* key, double& out, double min = -HUGE_VAL, bool strict = false) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) bad(key, "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out) || out < min || (strict && out == min))
      bad(key, std::string("must be ") + (strict ? "greater than " : "at least ") + std::to_string(min));
  }

  void flag(const char* key, bool& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) bad(key, "expected true or false");
    out = v.get<bool>();
  }

  void text(const char* key, std::string& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) bad(key, "expected a string");
    out = v.get<std::string>();
  }

  [[noreturn]] void bad(const std::string& key, const std::string& why) const {
    fail(ErrorCode::kValidation, "config field '" + where(key) + "': " + why);
  }

 private:
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
};

void read_dataset(const Section& s, DatasetSection& d) {
  s.allow({"classes", "per_class", "height", "width", "noise_sigma", "train_frac", "path"});
  s.size("classes", d.classes, 2);
  s.size("per_class", d.per_class, 2);
  s.size("height", d.height, 8);
  s.size("width", d.width, 8);
  s.real("noise_sigma", d.noise_sigma, 0.0);
  s.real("train_frac", d.train_frac, 0.0, true);
  if (d.train_frac >= 1.0) s.bad("train_frac", "must be below 1");
  s.text("path", d.path);
}

void read_train(const Section& s, TrainConfig& t) {
  s.allow({"lr", "epochs", "batch_size"});
  s.real("lr", t.lr, 0.0, true);
  s.size("epochs", t.epochs);
  s.size("batch_size", t.batch_size, 1);
}

void read_trigger(const Section& s, ExperimentConfig& c) {
  s.allow({"kind", "target", "eps0", "lr", "steps", "batch_size", "patch_size"});
  std::string kind = "optimized";
  s.text("kind", kind);
  if (kind == "optimized")
    c.trigger_kind = TriggerKind::kOptimized;
  else if (kind == "white_patch")
    c.trigger_kind = TriggerKind::kWhitePatch;
  else
    s.bad("kind", "expected \"optimized\" or \"white_patch\"");
  s.size("target", c.trigger.target);
  s.real("eps0", c.trigger.eps0, 0.0, true);
  s.real("lr", c.trigger.lr, 0.0, true);
  s.size("steps", c.trigger.steps);
  s.size("batch_size", c.trigger.batch_size, 1);
  s.size("patch_size", c.patch_size, 1);
}

void read_attack(const Section& s, ExperimentConfig& c) {
  s.allow({"method", "alpha", "beta", "gamma", "delta", "tau", "T", "K", "inner_rate", "M", "hvp", "outer_rate",
           "cosine", "outer_epochs", "batch_size", "inner_batch_size", "adba", "adba_ft"});
  std::string method = "scar";
  s.text("method", method);
  if (method == "scar")
    c.attack = AttackMethod::kScar;
  else if (method == "adba_ft")
    c.attack = AttackMethod::kAdbaFt;
  else if (method == "none")
    c.attack = AttackMethod::kNone;
  else
    s.bad("method", "expected \"scar\", \"adba_ft\" or \"none\"");
  ScarConfig& sc = c.scar;
  s.real("alpha", sc.weights.alpha, 0.0);
  s.real("beta", sc.weights.beta, 0.0);
  s.real("gamma", sc.weights.gamma, 0.0);
  s.real("delta", sc.weights.delta, 0.0);
  s.real("tau", sc.weights.tau, 0.0, true);
  s.size("T", sc.hyper.T, 1);
  s.size("K", sc.hyper.K, 1);
  s.real("inner_rate", sc.hyper.inner_rate, 0.0, true);
  s.size("M", sc.hyper.subset_batches, 1);
  std::string hvp = "finite_diff";
  s.text("hvp", hvp);
  if (hvp == "finite_diff")
    sc.hyper.backend = HvpBackend::kFiniteDiff;
  else if (hvp == "exact")
    sc.hyper.backend = HvpBackend::kExact;
  else
    s.bad("hvp", "expected \"finite_diff\" or \"exact\"");
  s.real("outer_rate", sc.outer_rate, 0.0, true);
  s.flag("cosine", sc.cosine);
  s.size("outer_epochs", sc.outer_epochs);
  s.size("batch_size", sc.batch_size, 1);
  s.size("inner_batch_size", sc.inner_batch_size);
  if (s.has("adba")) {
    Section a = s.sub("adba");
    a.allow({"teacher_lr", "shadow_lr", "trigger_lr", "epochs", "batch_size"});
    a.real("teacher_lr", c.adba.teacher_lr, 0.0, true);
    a.real("shadow_lr", c.adba.shadow_lr, 0.0, true);
    a.real("trigger_lr", c.adba.trigger_lr, 0.0, true);
    a.size("epochs", c.adba.epochs);
    a.size("batch_size", c.adba.batch_size, 1);
  }
  if (s.has("adba_ft")) {
    Section a = s.sub("adba_ft");
    a.allow({"eta", "margin", "lr", "epochs", "batch_size", "scope"});
    a.real("eta", c.adba_ft.eta, 0.0);
    a.real("margin", c.adba_ft.margin, 0.0, true);
    a.real("lr", c.adba_ft.lr, 0.0, true);
    a.size("epochs", c.adba_ft.epochs);
    a.size("batch_size", c.adba_ft.batch_size, 1);
    std::string scope = "last_layer";
    a.text("scope", scope);
    if (scope == "last_layer")
      c.adba_ft.last_layer_only = true;
    else if (scope == "all")
      c.adba_ft.last_layer_only = false;
    else
      a.bad("scope", "expected \"last_layer\" or \"all\"");
  }
}

void read_distill(const Section& s, ExperimentConfig& c) {
  s.allow({"method", "methods", "delta", "tau", "lr", "epochs", "batch_size"});
  auto parse = [&](const char* key, const json& v) {
    if (!v.is_string()) s.bad(key, "expected a method name");
    try {
      return parse_kd_method(v.get<std::string>());
    } catch (const Error&) {
      s.bad(key, "expected \"response\", \"feature\" or \"relation\"");
    }
  };
  if (s.has("method") && s.has("methods")) s.bad("method", "give either method or methods, not both");
  if (s.has("method")) c.distill_methods = {parse("method", s.raw("method"))};
  if (s.has("methods")) {
    const json& arr = s.raw("methods");
    if (!arr.is_array() || arr.empty()) s.bad("methods", "expected a non-empty list");
    c.distill_methods.clear();
    for (const json& v : arr) c.distill_methods.push_back(parse("methods", v));
  }
  s.real("delta", c.distill.delta, 0.0);
  s.real("tau", c.distill.tau, 0.0, true);
  s.real("lr", c.distill.lr, 0.0, true);
  s.size("epochs", c.distill.epochs);
  s.size("batch_size", c.distill.batch_size, 1);
}

void read_detect(const Section& s, ExperimentConfig& c) {
  s.allow({"methods", "model", "nc", "scale_up"});
  if (s.has("methods")) {
    const json& arr = s.raw("methods");
    if (!arr.is_array()) s.bad("methods", "expected a list");
    c.detect_nc = c.detect_scale_up = false;
    for (const json& v : arr) {
      if (v == "nc")
        c.detect_nc = true;
      else if (v == "scale_up")
        c.detect_scale_up = true;
      else
        s.bad("methods", "expected \"nc\" or \"scale_up\"");
    }
  }
  s.text("model", c.detect_model);
  if (c.detect_model != "attacked" && c.detect_model != "benign")
    s.bad("model", "expected \"attacked\" or \"benign\"");
  if (s.has("nc")) {
    Section n = s.sub("nc");
    n.allow({"steps", "l1_weight", "lr", "batch_size"});
    n.size("steps", c.nc.steps);
    n.real("l1_weight", c.nc.l1_weight, 0.0);
    n.real("lr", c.nc.lr, 0.0, true);
    n.size("batch_size", c.nc.batch_size, 1);
  }
  if (s.has("scale_up")) {
    Section u = s.sub("scale_up");
    u.allow({"factors"});
    if (u.has("factors")) {
      const json& arr = u.raw("factors");
      if (!arr.is_array() || arr.empty()) u.bad("factors", "expected a non-empty list");
      c.scale_up_factors.clear();
      for (const json& v : arr) {
        if (!v.is_number() || v.get<double>() < 1.0) u.bad("factors", "every factor must be a number >= 1");
        c.scale_up_factors.push_back(v.get<double>());
      }
    }
  }
}

std::string line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    fail(ErrorCode::kValidation, "config syntax error at " + line_and_column(json_text, byte) + ": " + e.what());
  }
  ExperimentConfig c;
  Section s(root, "");
  s.allow({"dataset", "architectures", "train", "trigger", "attack", "distill", "detect", "seeds", "output_dir"});

  std::uint64_t base = 0;
  if (s.has("seeds")) {
    Section seeds = s.sub("seeds");
    seeds.allow({"base", "data"});
    seeds.u64("base", base);
    if (seeds.has("data")) {
      std::uint64_t d = 0;
      seeds.u64("data", d);
      c.data_seed = d;
    }
  }
  c.apply_seed(base);

  if (s.has("dataset")) read_dataset(s.sub("dataset"), c.dataset);
  if (s.has("architectures")) {
    Section a = s.sub("architectures");
    a.allow({"teacher", "surrogate", "student"});
    a.text("teacher", c.teacher_arch);
    a.text("surrogate", c.surrogate_arch);
    a.text("student", c.student_arch);
  }
  if (s.has("train")) read_train(s.sub("train"), c.train);
  if (s.has("trigger")) read_trigger(s.sub("trigger"), c);
  if (s.has("attack")) read_attack(s.sub("attack"), c);
  if (s.has("distill")) read_distill(s.sub("distill"), c);
  if (s.has("detect")) read_detect(s.sub("detect"), c);
  s.text("output_dir", c.output_dir);

  if (c.trigger.target >= c.dataset.classes && c.dataset.path.empty())
    fail(ErrorCode::kValidation, "config field 'trigger.target': must be below dataset.classes");
  // Architectures must parse against the dataset shape.
  const Shape input{1, c.dataset.height, c.dataset.width};
  try {
    parse_architecture(c.teacher_arch, input, c.dataset.classes);
    parse_architecture(c.surrogate_arch, input, c.dataset.classes);
    parse_architecture(c.student_arch, input, c.dataset.classes);
  } catch (const Error& e) {
    if (c.dataset.path.empty()) fail(ErrorCode::kValidation, std::string("config field 'architectures': ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace dlab
