#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfm/checkpoint.hpp"
#include "qfm/config.hpp"
#include "qfm/data.hpp"
#include "qfm/dle.hpp"
#include "qfm/metrics.hpp"
#include "qfm/snm.hpp"

namespace qfm {

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, 0-based
  float lr = 0.0f;
  float loss = 0.0f;
  std::span<const Sample* const> batch_a;
  std::span<const Sample* const> batch_b;
  std::span<const float> targets_a;       // standardized ground truth
  std::span<const float> pseudo_targets;  // standardized pseudo-labels for batch_b
  const DualMemory* memory = nullptr;     // null when matching is off
};

struct TrainHooks {
  // After the memories are rebuilt, before any parameter changes.
  std::function<void(const StepRecord&, const ParamStore&)> after_memory;
  // After the optimizer update.
  std::function<void(const StepRecord&, const ParamStore&)> after_step;
};

struct EpochLog {
  std::size_t epoch = 0;
  float lr = 0.0f;
  double train_loss = 0.0;
  std::optional<double> test_srcc;
  std::optional<double> test_plcc;
};

struct FitResult {
  ParamStore params;
  LabelScale scale;
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
};

struct TrainingData {
  std::vector<const Sample*> train;
  std::vector<const Sample*> test;  // used for per-epoch evaluation only
  std::vector<const Sample*> unlabeled;
  const Teacher* teacher = nullptr;
};

// Trains a fresh student. With cfg.qfm.enabled every step runs: encode batch
// A, pseudo-label batch B, rebuild both temporary memories, match each query
// (self-excluded in A), mix features, decode, MSE to the original target,
// AdamW update. Errors are rethrown as TrainingError with epoch/step/sample
// context.
FitResult fit(const TrainConfig& cfg, const TrainingData& data, const TrainHooks& hooks = {});

// Inference only: predictions on the MOS scale.
std::vector<float> predict_all(const ModelConfig& cfg, const ParamStore& params,
                               const LabelScale& scale, std::span<const Sample* const> samples);

RepeatMetrics evaluate(const ModelConfig& cfg, const ParamStore& params, const LabelScale& scale,
                       std::span<const Sample* const> samples);

Checkpoint make_checkpoint(const TrainConfig& cfg, const FitResult& result);

struct LoadedModel {
  ModelConfig cfg;
  ParamStore params;
  LabelScale scale;
  nlohmann::json meta;
};

LoadedModel to_loaded_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

// Evaluates every sample of a labeled manifest as one repeat.
MetricReport evaluate_manifest(const LoadedModel& model, const Manifest& manifest);

// One report per test manifest, no parameter changes. A manifest with the
// same name as the checkpoint's training manifest is refused unless
// allow_same is set.
std::vector<MetricReport> cross_dataset_eval(const LoadedModel& model,
                                             std::span<const Manifest> test_manifests,
                                             bool allow_same = false);

struct RunInputs {
  Manifest train;
  std::optional<Manifest> unlabeled;
  std::optional<Teacher> teacher;
};

// Reads the manifests and teacher named in the config.
RunInputs load_run_inputs(const TrainConfig& cfg);

struct RepeatResult {
  SplitPlan plan;
  RepeatMetrics metrics;
  std::vector<EpochLog> epochs;
  std::filesystem::path checkpoint;
  ParamStore params;
  LabelScale scale;
};

struct RunResult {
  MetricReport report;
  std::vector<RepeatResult> repeats;
  std::vector<std::string> log;
};

// Split protocol + fit + held-out evaluation for every repeat. When
// write_outputs is set, checkpoints, run.log, report.txt and summary.json go
// to cfg.output_dir.
RunResult run_training(const TrainConfig& cfg, const RunInputs& inputs, bool write_outputs = true,
                       const TrainHooks& hooks = {});

// Throws ConfigError when an unlabeled sample id also appears among test ids.
void check_disjoint(std::span<const Sample* const> unlabeled, std::span<const std::string> test_ids);

}  // namespace qfm
