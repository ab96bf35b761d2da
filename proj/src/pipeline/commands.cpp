// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

#include "dlab/checkpoint.hpp"
#include "dlab/pipeline.hpp"
#include "dlab/rng.hpp"

namespace dlab {

namespace fs = std::filesystem;

std::string artifact::student(KdMethod m) { return "student_" + std::string(kd_method_name(m)) + ".ckpt"; }

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "model,split,acc,asr\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.4f\n", r.model.c_str(), r.split.c_str(), r.acc, r.asr);
    out += buf;
  }
  return out;
}

Splits make_splits(const ExperimentConfig& cfg) {
  const std::uint64_t data_seed = cfg.data_seed.value_or(derive_seed(cfg.seed, 0));
  const DatasetSection& d = cfg.dataset;
  Dataset full = d.path.empty()
                     ? gen_synthetic(d.classes, d.per_class, d.height, d.width, d.noise_sigma, data_seed)
                     : load_dataset_binary(d.path);
  auto [train, test] = split(full, d.train_frac, derive_seed(data_seed, 1));
  return {std::move(train), std::move(test)};
}

namespace {

struct Context {
  const ExperimentConfig& cfg;
  fs::path out;
  Splits data;
  Shape input;

  Context(const ExperimentConfig& c, const fs::path& o) : cfg(c), out(o), data(make_splits(c)) {
    input = data.train.sample_shape();
    fs::create_directories(out);
  }

  fs::path at(const std::string& name) const { return out / name; }
  bool exists(const std::string& name) const { return fs::exists(at(name)); }

  fs::path need(const std::string& name) const {
    const fs::path p = at(name);
    if (!fs::exists(p)) fail(ErrorCode::kNotFound, "missing artifact " + p.string() + " (run the earlier stage first)");
    return p;
  }

  Architecture arch(const std::string& text) const { return parse_architecture(text, input, data.train.classes()); }

  Network load(const std::string& name) const {
    Network net = load_network(need(name));
    require(net.architecture().input == input && net.class_count() == data.train.classes(), ErrorCode::kValidation,
            at(name).string() + ": network does not match the configured dataset");
    return net;
  }

  Trigger load_trig(const std::string& name) const {
    Trigger t = load_trigger(need(name));
    require(t.mu.shape() == input && t.target < data.train.classes(), ErrorCode::kValidation,
            at(name).string() + ": trigger does not match the configured dataset");
    return t;
  }

  // The trigger the deployed teacher is meant to respond to.
  Trigger eval_trigger() const {
    if (exists(artifact::kAttackTrigger)) return load_trig(artifact::kAttackTrigger);
    if (exists(artifact::kTrigger)) return load_trig(artifact::kTrigger);
    return Trigger::zeros(input, cfg.trigger.eps0, cfg.trigger.target);
  }

  MetricRow row(const std::string& model, const Network& net, const Trigger& trig) const {
    return {model, "test", accuracy(net, data.test), attack_success_rate(net, data.test, trig)};
  }

  void write(const std::string& name, const std::string& text) const { write_file_atomic(at(name), text); }
};

}  // namespace

void cmd_train_benign(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  Network teacher = Network::init(ctx.arch(cfg.teacher_arch), derive_seed(cfg.seed, 10));
  teacher = train_benign(std::move(teacher), ctx.data.train, cfg.train);
  save_network(teacher, ctx.at(artifact::kBenignTeacher));
  ctx.write(artifact::kMetrics, metrics_csv({ctx.row("teacher_benign", teacher, ctx.eval_trigger())}));
}

void cmd_pretrain_trigger(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  const Network teacher = ctx.load(artifact::kBenignTeacher);
  DistillConfig dc = cfg.distill;
  dc.method = KdMethod::kResponse;
  dc.seed = derive_seed(cfg.seed, 13);
  const Network student =
      distill(teacher, Network::init(ctx.arch(cfg.student_arch), derive_seed(cfg.seed, 11)), ctx.data.train, dc);
  save_network(student, ctx.at(artifact::kBenignStudent));

  Trigger trig = cfg.trigger_kind == TriggerKind::kWhitePatch
                     ? Trigger::white_patch(ctx.input, cfg.patch_size, cfg.trigger.target)
                     : pretrain_trigger(teacher, student, ctx.data.train, cfg.trigger).trigger;
  save_trigger(trig, ctx.data.train.classes(), ctx.at(artifact::kTrigger));
  ctx.write(artifact::kMetrics,
            metrics_csv({ctx.row("teacher_benign", teacher, trig), ctx.row("student_benign", student, trig)}));
}

void cmd_attack(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  const Network teacher = ctx.load(artifact::kBenignTeacher);
  std::vector<MetricRow> rows;
  switch (cfg.attack) {
    case AttackMethod::kScar: {
      const Trigger trig = ctx.load_trig(artifact::kTrigger);
      ScarResult r = scar_train(teacher, ctx.arch(cfg.surrogate_arch), ctx.data.train, ctx.data.test, trig, cfg.scar);
      save_network(r.teacher, ctx.at(artifact::kAttackedTeacher));
      save_trigger(trig, ctx.data.train.classes(), ctx.at(artifact::kAttackTrigger));
      ctx.write(artifact::kAttackLog, scar_log_csv(r.log));
      rows.push_back(ctx.row("teacher_attacked", r.teacher, trig));
      break;
    }
    case AttackMethod::kAdbaFt: {
      const Trigger init = Trigger::zeros(ctx.input, cfg.trigger.eps0, cfg.trigger.target);
      AdbaResult r = adba_train(teacher, ctx.arch(cfg.surrogate_arch), ctx.data.train, init, cfg.adba);
      save_network(r.teacher, ctx.at(artifact::kAdbaTeacher));
      save_trigger(r.trigger, ctx.data.train.classes(), ctx.at(artifact::kAttackTrigger));
      const Network masked = adba_ft(r.teacher, r.trigger, ctx.data.train, cfg.adba_ft);
      save_network(masked, ctx.at(artifact::kAttackedTeacher));
      rows.push_back(ctx.row("teacher_adba", r.teacher, r.trigger));
      rows.push_back(ctx.row("teacher_attacked", masked, r.trigger));
      break;
    }
    case AttackMethod::kNone: {
      const Trigger trig = ctx.exists(artifact::kTrigger)
                               ? ctx.load_trig(artifact::kTrigger)
                               : Trigger::zeros(ctx.input, cfg.trigger.eps0, cfg.trigger.target);
      save_network(teacher, ctx.at(artifact::kAttackedTeacher));
      save_trigger(trig, ctx.data.train.classes(), ctx.at(artifact::kAttackTrigger));
      rows.push_back(ctx.row("teacher_attacked", teacher, trig));
      break;
    }
  }
  ctx.write(artifact::kMetrics, metrics_csv(rows));
}

void cmd_distill(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  const Network teacher = ctx.load(artifact::kAttackedTeacher);
  const Trigger trig = ctx.eval_trigger();
  std::vector<MetricRow> rows;
  for (KdMethod m : cfg.distill_methods) {
    DistillConfig dc = cfg.distill;
    dc.method = m;
    const Network student =
        distill(teacher, Network::init(ctx.arch(cfg.student_arch), derive_seed(cfg.seed, 12)), ctx.data.train, dc);
    save_network(student, ctx.at(artifact::student(m)));
    rows.push_back(ctx.row("student_" + std::string(kd_method_name(m)), student, trig));
  }
  ctx.write(artifact::kMetrics, metrics_csv(rows));
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  const Trigger trig = ctx.eval_trigger();
  std::vector<std::pair<std::string, std::string>> models{{"teacher_benign", artifact::kBenignTeacher},
                                                          {"student_benign", artifact::kBenignStudent},
                                                          {"teacher_adba", artifact::kAdbaTeacher},
                                                          {"teacher_attacked", artifact::kAttackedTeacher}};
  for (KdMethod m : {KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation})
    models.emplace_back("student_" + std::string(kd_method_name(m)), artifact::student(m));
  std::vector<MetricRow> rows;
  for (const auto& [model, file] : models)
    if (ctx.exists(file)) rows.push_back(ctx.row(model, ctx.load(file), trig));
  if (rows.empty()) ctx.need(artifact::kBenignTeacher);
  ctx.write(artifact::kMetrics, metrics_csv(rows));
}

void cmd_detect(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  const Network model =
      ctx.load(cfg.detect_model == "benign" ? artifact::kBenignTeacher : artifact::kAttackedTeacher);
  const Trigger trig = ctx.eval_trigger();
  if (cfg.detect_nc) ctx.write(artifact::kNcReport, nc_report_csv(neural_cleanse(model, ctx.data.test, cfg.nc)));
  if (cfg.detect_scale_up) {
    const PoisonedView poisoned(ctx.data.test, trig, trig.target, true);
    ctx.write(artifact::kScaleUp, scale_up_csv(scale_up_curve(model, ctx.data.test.all_images(),
                                                               poisoned.all_images(), cfg.scale_up_factors)));
  }
}

void cmd_export_data(const ExperimentConfig& cfg, const fs::path& out) {
  Context ctx(cfg, out);
  ctx.write("train_labels.csv", labels_csv(ctx.data.train));
  ctx.write("test_labels.csv", labels_csv(ctx.data.test));
  save_dataset_binary(ctx.data.train, ctx.at("train.bin"));
  save_dataset_binary(ctx.data.test, ctx.at("test.bin"));
}

void cmd_run(const ExperimentConfig& cfg, const fs::path& out) {
  cmd_train_benign(cfg, out);
  cmd_pretrain_trigger(cfg, out);
  cmd_attack(cfg, out);
  cmd_distill(cfg, out);
  cmd_evaluate(cfg, out);
  if (cfg.detect_nc || cfg.detect_scale_up) cmd_detect(cfg, out);
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train-benign", "pretrain-trigger", "attack", "distill",
                                              "evaluate",     "detect",           "export-data", "run"};
  return names;
}

void run_command(std::string_view name, const ExperimentConfig& cfg, const fs::path& out) {
  if (name == "train-benign") return cmd_train_benign(cfg, out);
  if (name == "pretrain-trigger") return cmd_pretrain_trigger(cfg, out);
  if (name == "attack") return cmd_attack(cfg, out);
  if (name == "distill") return cmd_distill(cfg, out);
  if (name == "evaluate") return cmd_evaluate(cfg, out);
  if (name == "detect") return cmd_detect(cfg, out);
  if (name == "export-data") return cmd_export_data(cfg, out);
  if (name == "run") return cmd_run(cfg, out);
  fail(ErrorCode::kInvalidArgument, "unknown command '" + std::string(name) + "'");
}

}  // namespace dlab
