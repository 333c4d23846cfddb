#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qfm/checkpoint.hpp"
#include "qfm/model.hpp"
#include "qfm/snm.hpp"

namespace qfm {

struct Manifest;
struct TrainConfig;

// Maps MOS-scale labels to the standardized regression targets the network is
// trained on, and back.
struct LabelScale {
  double mean = 0.0;
  double std = 1.0;
  float to_target(float mos) const { return static_cast<float>((mos - mean) / std); }
  float to_mos(float target) const { return static_cast<float>(target * std + mean); }
};

LabelScale fit_label_scale(std::span<const float> labels);

// A frozen pre-trained network used only for inference. `id` is the parameter
// digest taken when the teacher was loaded.
class Teacher {
 public:
  explicit Teacher(const Checkpoint& ckpt);

  const ModelConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  const LabelScale& scale() const { return scale_; }
  const std::string& id() const { return id_; }
  bool frozen() const { return true; }
  // Recomputes the digest; equals id() as long as nothing modified the weights.
  std::string current_digest() const { return params_.digest(); }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  LabelScale scale_;
  std::string id_;
};

Teacher load_teacher(const std::filesystem::path& path);

struct PseudoLabeledBatch {
  std::vector<float> pseudo_scores;  // MOS scale, batch order
  std::string teacher_id;
};

// Deterministic inference-mode labeling. Throws ShapeError when an image does
// not fit the teacher's configuration.
PseudoLabeledBatch pseudo_label(const Teacher& teacher, std::span<const Tensor> images);

struct DualMemory {
  TemporaryMemory a;
  TemporaryMemory b;
};

// Rebuilds both memories from the student's current (detached) features:
// A with ground-truth scores, B with pseudo-scores. B may be empty.
void build_dual_memory(DualMemory& memory, const ModelConfig& cfg, const ParamStore& student,
                       std::span<const Tensor> images_a, std::span<const float> scores_a,
                       std::span<const Tensor> images_b, std::span<const float> pseudo_b);

// Plain supervised training of the student architecture (no matching, no
// mixing, no distillation) on a split of `pool`; the held-out metrics are
// stored in the checkpoint metadata under "teacher_eval".
Checkpoint pretrain_teacher(const Manifest& pool, const TrainConfig& cfg);

}  // namespace qfm
