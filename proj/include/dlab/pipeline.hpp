// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlab/attack.hpp"
#include "dlab/detect.hpp"
#include "dlab/distill.hpp"
#include "dlab/trigger.hpp"

namespace dlab {

enum class AttackMethod { kNone, kScar, kAdbaFt };
enum class TriggerKind { kOptimized, kWhitePatch };

struct DatasetSection {
  std::size_t classes = 4;
  std::size_t per_class = 600;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise_sigma = 0.15;
  double train_frac = 5.0 / 6.0;
  std::string path;  // binary dataset file; overrides generation when set
};

struct ExperimentConfig {
  DatasetSection dataset;
  std::string teacher_arch = "teacher";
  std::string surrogate_arch = "surrogate";
  std::string student_arch = "student";
  TrainConfig train;  // benign teacher

  TriggerKind trigger_kind = TriggerKind::kOptimized;
  TriggerPretrainConfig trigger;
  std::size_t patch_size = 3;

  AttackMethod attack = AttackMethod::kScar;
  ScarConfig scar;
  AdbaConfig adba;
  AdbaFtConfig adba_ft;

  std::vector<KdMethod> distill_methods{KdMethod::kResponse, KdMethod::kFeature, KdMethod::kRelation};
  DistillConfig distill;

  bool detect_nc = true;
  bool detect_scale_up = true;
  std::string detect_model = "attacked";  // "attacked" or "benign"
  NcConfig nc;
  std::vector<double> scale_up_factors{1, 2, 3, 4, 5};

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  std::string output_dir = "dlab_out";

  // Re-derives every stage seed from `seed` (and data_seed).
  void apply_seed(std::uint64_t base);
};

// Errors carry the offending field path, or the line and column for JSON
// syntax errors.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Splits {
  Dataset train;
  Dataset test;
};

Splits make_splits(const ExperimentConfig& cfg);

// Artifact names inside the output directory.
namespace artifact {
inline constexpr const char* kBenignTeacher = "benign_teacher.ckpt";
inline constexpr const char* kBenignStudent = "benign_student.ckpt";
inline constexpr const char* kTrigger = "trigger.ckpt";
inline constexpr const char* kAttackedTeacher = "attacked_teacher.ckpt";
inline constexpr const char* kAttackTrigger = "attack_trigger.ckpt";
inline constexpr const char* kAdbaTeacher = "adba_teacher.ckpt";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kAttackLog = "attack_log.csv";
inline constexpr const char* kNcReport = "nc_report.csv";
inline constexpr const char* kScaleUp = "scale_up.csv";
std::string student(KdMethod m);
}  // namespace artifact

struct MetricRow {
  std::string model;
  std::string split;
  double acc = 0.0;
  double asr = 0.0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);

// Pipeline stages. Every stage reads its prerequisites from `out`, fails
// with kNotFound naming a missing file, and writes its outputs atomically.
void cmd_train_benign(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_pretrain_trigger(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_attack(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_distill(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_detect(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_export_data(const ExperimentConfig& cfg, const std::filesystem::path& out);
// train-benign, pretrain-trigger, attack, distill, evaluate, detect.
void cmd_run(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Dispatches a subcommand name ("train-benign", ..., "run").
void run_command(std::string_view name, const ExperimentConfig& cfg, const std::filesystem::path& out);
const std::vector<std::string>& command_names();

}  // namespace dlab
