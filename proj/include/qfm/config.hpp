#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfm/model.hpp"
#include "qfm/optim.hpp"
#include "qfm/qcc.hpp"
#include "qfm/snm.hpp"

namespace qfm {

enum class QccMode { kFeatureMix, kLabelMix };

struct QfmConfig {
  // Master switch for semantic noise matching + quality consistency.
  bool enabled = false;
  MatchMode match_mode = MatchMode::kFeatureScore;
  bool clamp_cos = true;
  bool label_zscore = true;
  float lambda1 = 1e-7f;
  float lambda2 = 1e-7f;
  std::size_t k_a = 1;
  std::size_t k_b = 1;
  QccMode mode = QccMode::kFeatureMix;
  float beta1 = 0.1f;
  float beta2 = 0.1f;
  // Adds the unperturbed loss on F_o to the mixed-feature loss.
  bool additive_clean_loss = false;
};

struct DleConfig {
  bool enabled = false;
  std::filesystem::path teacher_checkpoint;
  std::filesystem::path unlabeled_manifest;
  // 0 means "same as the labeled batch size".
  std::size_t unlabeled_batch_size = 0;
  // Also train on unlabeled samples as queries, supervised by their
  // pseudo-labels. Off: the pool only supplies matchable noise features.
  bool pseudo_queries = false;
  // Label the whole pool once up front instead of per batch.
  bool cache = false;
};

struct OptimConfig {
  AdamWConfig adamw;
  std::size_t epochs = 9;
  std::size_t decay_every = 3;
  float decay_factor = 10.0f;
  std::size_t batch_size = 4;

  float lr_at(std::size_t epoch) const;
};

struct DataConfig {
  std::filesystem::path train_manifest;
  double train_fraction = 0.8;
  std::size_t repeats = 1;
  std::uint64_t split_seed = 0;
};

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  QfmConfig qfm;
  DleConfig dle;
  DataConfig data;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  bool eval_each_epoch = true;

  void validate() const;
};

// Nested key-value YAML; every key is optional and falls back to the default
// above. Unknown keys are rejected. Relative paths resolve against base_dir.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});

// Applies one dotted override such as "qfm.lambda1=1e-3".
void apply_override(TrainConfig& cfg, const std::string& assignment);

nlohmann::json to_json(const TrainConfig& cfg);
std::string to_yaml(const TrainConfig& cfg);

std::string to_string(MatchMode m);
MatchMode parse_match_mode(const std::string& s);

}  // namespace qfm
