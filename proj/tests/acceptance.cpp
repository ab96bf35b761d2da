// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Usage: dlab_acceptance <config.json> <work-dir>
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlab/checkpoint.hpp"
#include "dlab/pipeline.hpp"
#include "support.hpp"

using namespace dlab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %s %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
}

struct Metric {
  double acc = 0.0;
  double asr = 0.0;
};

std::map<std::string, Metric> read_metrics(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "cannot open " + file.string());
  std::map<std::string, Metric> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string model, split, acc, asr;
    std::getline(ss, model, ',');
    std::getline(ss, split, ',');
    std::getline(ss, acc, ',');
    std::getline(ss, asr, ',');
    out[model] = {std::stod(acc), std::stod(asr)};
  }
  return out;
}

const Metric& metric(const std::map<std::string, Metric>& m, const std::string& model) {
  auto it = m.find(model);
  require(it != m.end(), ErrorCode::kNotFound, "metrics have no row for " + model);
  return it->second;
}

void seed_dir(const fs::path& from, const fs::path& to, std::initializer_list<std::pair<const char*, const char*>> files) {
  fs::remove_all(to);
  fs::create_directories(to);
  for (const auto& [src, dst] : files) fs::copy_file(from / src, to / dst);
}

const KdMethod kMethods[] = {KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation};

std::string student_row(KdMethod m) { return "student_" + std::string(kd_method_name(m)); }

HypergradConfig hconfig(std::size_t T, std::size_t K, double eps) {
  HypergradConfig c;
  c.T = T;
  c.K = K;
  c.inner_rate = eps;
  return c;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  if (!fs::exists(a) || !fs::exists(b)) return false;
  return read_file(a) == read_file(b);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <config.json> <work-dir>\n", argv[0]);
    return 2;
  }
  const ExperimentConfig cfg = load_config(argv[1]);
  const fs::path work = argv[2];
  fs::create_directories(work);
  const fs::path A = work / "A";

  report("C1", "backward matches central differences", [] {
    const auto t0 = Clock::now();
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      testing::RandomGraph g(seed);
      worst = std::max(worst, relative_error(gradient(g, g.at()), finite_diff_grad(g, g.at())));
    }
    const double t = seconds_since(t0);
    return Outcome{worst < 1e-5 && t < 60.0, fmt("max rel err %.3g over 100 graphs (< 1e-5), %.1f s (< 60 s)", worst, t)};
  });

  report("C2", "finite-difference HVP matches exact", [] {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      testing::NetLoss loss(parse_architecture("dense(6,8) relu dense(8,3)", {6}, 3), seed);
      const ParamVector v = testing::random_params(loss.at().layout_ptr(), seed + 1000);
      worst = std::max(worst, relative_error(hvp(loss, loss.at(), v, HvpBackend::kFiniteDiff),
                                             hvp(loss, loss.at(), v, HvpBackend::kExact)));
    }
    return Outcome{worst < 1e-3, fmt("max rel err %.3g over 20 seeds (< 1e-3)", worst)};
  });

  report("C3", "scalar bilevel oracle", [] {
    testing::ScalarBilevel p(2.0);
    const BatchStream stream{Batch{0}};
    const Batch subset{0};
    auto grad = [&](std::size_t K) { return hypergradient(p, p.scalar(1.0), hconfig(60, K, 0.5), stream, subset, 0).grad[0]; };
    const double g = grad(40);
    const double expected = std::pow(0.5, 10);
    bool ratios_ok = true;
    std::string ratios;
    for (std::size_t K : {5, 10, 20}) {
      const double r = std::abs(grad(K + 10) - 4.0) / std::abs(grad(K) - 4.0);
      ratios_ok = ratios_ok && std::abs(r / expected - 1.0) <= 0.2;
      ratios += fmt(" %.3g", r);
    }
    return Outcome{std::abs(g - 4.0) <= 1e-3 && ratios_ok,
                   fmt("hypergradient %.6f (4 +- 1e-3); per-10 ratios%s vs %.3g (+-20%%)", g, ratios.c_str(), expected)};
  });

  report("C4", "hypergradient tracks unrolled differentiation", [] {
    const auto t0 = Clock::now();
    const Batch all{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    const BatchStream stream{all};
    double worst = 1.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      testing::NetBilevel p(seed, 4.0);
      const auto hc = hconfig(5, 100, 0.2);
      const auto hg = hypergradient(p, p.teacher_params(), hc, stream, all, seed);
      worst = std::min(worst, cosine_similarity(hg.grad, unrolled_oracle(p, p.teacher_params(), hc, stream, all, seed)));
    }
    const double t = seconds_since(t0);
    return Outcome{worst > 0.99 && t < 300.0, fmt("min cosine %.5f over 10 seeds (> 0.99), %.1f s (< 300 s)", worst, t)};
  });

  // Main pipeline, stage by stage.
  fs::remove_all(A);
  const auto pipeline_start = Clock::now();
  double trigger_seconds = 0.0;
  bool pipeline_ok = true;
  try {
    cmd_train_benign(cfg, A);
    cmd_pretrain_trigger(cfg, A);
    trigger_seconds = seconds_since(pipeline_start);
  } catch (const std::exception& e) {
    std::printf("note: benign stages failed: %s\n", e.what());
    pipeline_ok = false;
  }
  const auto benign = pipeline_ok ? read_metrics(A / artifact::kMetrics) : std::map<std::string, Metric>{};

  report("C5", "pre-optimized trigger", [&] {
    const Trigger trig = load_trigger(A / artifact::kTrigger);
    const double t_asr = metric(benign, "teacher_benign").asr, s_asr = metric(benign, "student_benign").asr;
    return Outcome{trig.linf() <= 0.2 && t_asr >= 0.5 && s_asr >= 0.5 && trigger_seconds < 600.0,
                   fmt("|mu|_inf %.4f (<= 0.2); ASR teacher %.3f student %.3f (>= 0.5); %.1f s (< 600 s)", trig.linf(),
                       t_asr, s_asr, trigger_seconds)};
  });

  std::string attack_error;
  if (pipeline_ok) {
    try {
      cmd_attack(cfg, A);
      cmd_distill(cfg, A);
      cmd_evaluate(cfg, A);
      cmd_detect(cfg, A);
    } catch (const std::exception& e) {
      attack_error = e.what();
      pipeline_ok = false;
    }
  }
  const double pipeline_seconds = seconds_since(pipeline_start);
  auto main_metrics = [&] {
    require(pipeline_ok, ErrorCode::kInternal, "main pipeline failed: " + attack_error);
    return read_metrics(A / artifact::kMetrics);
  };

  report("C6", "SCAR hides the backdoor in the teacher and transfers it", [&] {
    const auto m = main_metrics();
    const Metric tb = metric(m, "teacher_benign"), ta = metric(m, "teacher_attacked"), sb = metric(m, "student_benign");
    bool ok = ta.asr < 0.10 && std::abs(ta.acc - tb.acc) <= 0.05 && pipeline_seconds < 3600.0;
    std::string detail = fmt("teacher ASR %.3f (< 0.10), ACC %.3f vs benign %.3f (<= 5 pts);", ta.asr, ta.acc, tb.acc);
    for (KdMethod k : kMethods) {
      const Metric s = metric(m, student_row(k));
      ok = ok && s.asr > 0.80 && std::abs(s.acc - sb.acc) <= 0.05;
      detail += fmt(" %s ASR %.3f ACC %.3f;", std::string(kd_method_name(k)).c_str(), s.asr, s.acc);
    }
    detail += fmt(" students need ASR > 0.80, ACC within 5 pts of %.3f; %.0f s (< 3600 s)", sb.acc, pipeline_seconds);
    return Outcome{ok, detail};
  });

  report("C7", "response students across delta", [&] {
    main_metrics();
    bool ok = true;
    std::string detail;
    for (double delta : {1.0, 3.0, 5.0}) {
      const fs::path dir = work / fmt("delta_%g", delta);
      seed_dir(A, dir, {{artifact::kAttackedTeacher, artifact::kAttackedTeacher},
                        {artifact::kAttackTrigger, artifact::kAttackTrigger}});
      ExperimentConfig c = cfg;
      c.distill_methods = {KdMethod::kResponse};
      c.distill.delta = delta;
      cmd_distill(c, dir);
      const double asr = metric(read_metrics(dir / artifact::kMetrics), "student_response").asr;
      ok = ok && asr > 0.70;
      detail += fmt("delta %g ASR %.3f; ", delta, asr);
    }
    return Outcome{ok, detail + "each needs > 0.70"};
  });

  report("C8", "ablations weaken transfer", [&] {
    const auto full = main_metrics();
    const fs::path wo_g = work / "wo_trigger";
    seed_dir(A, wo_g, {{artifact::kBenignTeacher, artifact::kBenignTeacher}});
    ExperimentConfig cg = cfg;
    cg.trigger_kind = TriggerKind::kWhitePatch;
    cmd_pretrain_trigger(cg, wo_g);
    cmd_attack(cg, wo_g);
    cmd_distill(cg, wo_g);
    const auto mg = read_metrics(wo_g / artifact::kMetrics);

    const fs::path wo_s = work / "wo_surrogate";
    seed_dir(A, wo_s, {{artifact::kBenignTeacher, artifact::kBenignTeacher}, {artifact::kTrigger, artifact::kTrigger}});
    ExperimentConfig cs = cfg;
    cs.scar.weights.beta = 0.0;
    cs.scar.weights.gamma = 0.0;
    cmd_attack(cs, wo_s);
    cmd_distill(cs, wo_s);
    const auto ms = read_metrics(wo_s / artifact::kMetrics);

    bool patch_ok = true;
    int wins = 0;
    std::string dg = "w/o G:", dsur = "w/o F_s:";
    for (KdMethod k : kMethods) {
      const std::string name(kd_method_name(k));
      const double g = metric(mg, student_row(k)).asr;
      const double a = metric(full, student_row(k)).asr, b = metric(ms, student_row(k)).asr;
      patch_ok = patch_ok && g < 0.30;
      if (a - b >= 0.20) ++wins;
      dg += fmt(" %s %.3f", name.c_str(), g);
      dsur += fmt(" %s %.3f vs %.3f", name.c_str(), b, a);
    }
    return Outcome{patch_ok && wins >= 2, dg + " (each < 0.30); " + dsur +
                                              fmt(" (%d of 3 lower by >= 20 pts, need 2)", wins)};
  });

  report("C9", "ADBA and ADBA(FT) baseline", [&] {
    const fs::path dir = work / "adba";
    seed_dir(A, dir, {{artifact::kBenignTeacher, artifact::kBenignTeacher}});
    ExperimentConfig c = cfg;
    c.attack = AttackMethod::kAdbaFt;
    cmd_attack(c, dir);
    const auto m = read_metrics(dir / artifact::kMetrics);
    const double adba = metric(m, "teacher_adba").asr, masked = metric(m, "teacher_attacked").asr;

    const fs::path sdir = work / "adba_student";
    seed_dir(dir, sdir, {{artifact::kAdbaTeacher, artifact::kAttackedTeacher},
                         {artifact::kAttackTrigger, artifact::kAttackTrigger}});
    c.distill_methods = {KdMethod::kResponse};
    cmd_distill(c, sdir);
    const double student = metric(read_metrics(sdir / artifact::kMetrics), "student_response").asr;
    return Outcome{masked < 0.10 && adba > 0.80 && student > 0.50,
                   fmt("masked teacher ASR %.3f (< 0.10); ADBA teacher ASR %.3f (> 0.80); ADBA student ASR %.3f (> 0.50)",
                       masked, adba, student)};
  });

  report("C10", "detection contrast", [&] {
    main_metrics();
    const Splits data = make_splits(cfg);
    // 3x3 black/white checkerboard in the bottom-right corner.
    const Shape shape = data.train.sample_shape();
    const std::size_t h = shape[1], w = shape[2];
    Trigger patch = Trigger::zeros(shape, 1.0, cfg.trigger.target);
    for (std::size_t r = h - 3; r < h; ++r)
      for (std::size_t c = w - 3; c < w; ++c) patch.mu[r * w + c] = (r + c) % 2 ? 1.0 : -1.0;
    const Dataset poisoned_train = badnets_poison(data.train, patch, 0.1, derive_seed(cfg.seed, 40));
    const Network badnets = train_benign(
        Network::init(parse_architecture(cfg.teacher_arch, data.train.sample_shape(), data.train.classes()),
                      derive_seed(cfg.seed, 41)),
        poisoned_train, cfg.train);
    const Network scar = load_network(A / artifact::kAttackedTeacher);
    const Trigger scar_trigger = load_trigger(A / artifact::kAttackTrigger);
    const std::size_t t = cfg.trigger.target;

    auto dominates = [&](const Network& net, const Trigger& trig) {
      const PoisonedView pv(data.test, trig, trig.target, true);
      const ScaleUpCurve curve = scale_up_curve(net, data.test.all_images(), pv.all_images(), cfg.scale_up_factors);
      bool all = true;
      for (std::size_t i = 0; i < curve.factors.size(); ++i)
        if (curve.factors[i] >= 2.0) all = all && curve.poisoned_confidence[i] >= curve.benign_confidence[i];
      return all;
    };
    const NcReport nb = neural_cleanse(badnets, data.test, cfg.nc);
    const NcReport ns = neural_cleanse(scar, data.test, cfg.nc);
    const bool db = dominates(badnets, patch), ds = dominates(scar, scar_trigger);
    const bool ok = nb.anomaly_index[t] > 2.0 && db && ns.anomaly_index[t] <= 2.0 && !ds;
    return Outcome{ok, fmt("BadNets: NC index %.2f (> 2), SCALE-UP dominance %s (yes); "
                           "SCAR: NC index %.2f (<= 2), SCALE-UP dominance %s (no); BadNets ASR %.3f",
                           nb.anomaly_index[t], db ? "yes" : "no", ns.anomaly_index[t], ds ? "yes" : "no",
                           attack_success_rate(badnets, data.test, patch))};
  });

  report("C11", "pipeline is byte-reproducible", [&] {
    main_metrics();
    const fs::path B = work / "B";
    fs::remove_all(B);
    cmd_run(cfg, B);
    std::string detail;
    bool ok = true;
    for (const char* f : {artifact::kMetrics, artifact::kAttackLog, artifact::kNcReport, artifact::kScaleUp}) {
      const bool same = same_bytes(A / f, B / f);
      ok = ok && same;
      detail += fmt("%s %s; ", f, same ? "identical" : "DIFFERS");
    }
    return Outcome{ok, detail};
  });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
