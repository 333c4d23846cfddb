#include "qfm/dle.hpp"

#include <cmath>

#include "qfm/config.hpp"
#include "qfm/data.hpp"
#include "qfm/error.hpp"
#include "qfm/train.hpp"

namespace qfm {

LabelScale fit_label_scale(std::span<const float> labels) {
  LabelScale s;
  if (labels.empty()) return s;
  double mean = 0.0;
  for (float y : labels) mean += y;
  mean /= static_cast<double>(labels.size());
  double var = 0.0;
  for (float y : labels) var += (y - mean) * (y - mean);
  var /= static_cast<double>(labels.size());
  s.mean = mean;
  s.std = var > 0.0 ? std::sqrt(var) : 1.0;
  return s;
}

Teacher::Teacher(const Checkpoint& ckpt)
    : cfg_(model_config_from_json(ckpt.meta.at("model"))), params_(ckpt.params.clone()) {
  params_.set_requires_grad(false);
  if (ckpt.meta.contains("label_scale")) {
    scale_.mean = ckpt.meta["label_scale"].at("mean").get<double>();
    scale_.std = ckpt.meta["label_scale"].at("std").get<double>();
  }
  id_ = params_.digest();
}

Teacher load_teacher(const std::filesystem::path& path) { return Teacher(load_checkpoint(path)); }

PseudoLabeledBatch pseudo_label(const Teacher& teacher, std::span<const Tensor> images) {
  PseudoLabeledBatch out;
  out.teacher_id = teacher.id();
  out.pseudo_scores.reserve(images.size());
  for (const Tensor& img : images) {
    out.pseudo_scores.push_back(
        teacher.scale().to_mos(predict(img, teacher.config(), teacher.params())));
  }
  return out;
}

void build_dual_memory(DualMemory& memory, const ModelConfig& cfg, const ParamStore& student,
                       std::span<const Tensor> images_a, std::span<const float> scores_a,
                       std::span<const Tensor> images_b, std::span<const float> pseudo_b) {
  NoGradGuard guard;
  auto encode_all = [&](std::span<const Tensor> images) {
    std::vector<std::vector<float>> feats;
    feats.reserve(images.size());
    for (const Tensor& img : images) feats.push_back(flatten(encode(img, cfg, student)));
    return feats;
  };
  memory.a.ingest_flat(encode_all(images_a), scores_a, "A");
  memory.b.ingest_flat(encode_all(images_b), pseudo_b, "B");
}

Checkpoint pretrain_teacher(const Manifest& pool, const TrainConfig& cfg) {
  pool.validate(true);
  TrainConfig tc = cfg;
  tc.qfm.enabled = false;
  tc.dle.enabled = false;
  const auto plans = split(pool, tc.data.train_fraction, 1, tc.data.split_seed);
  TrainingData data;
  for (const auto& id : plans[0].train_ids) data.train.push_back(&pool.find(id));
  for (const auto& id : plans[0].test_ids) data.test.push_back(&pool.find(id));
  const FitResult fit_result = fit(tc, data);
  const RepeatMetrics held_out = evaluate(tc.model, fit_result.params, fit_result.scale, data.test);
  Checkpoint ckpt = make_checkpoint(tc, fit_result);
  ckpt.meta["role"] = "teacher";
  ckpt.meta["train_manifest"] = pool.name;
  ckpt.meta["teacher_eval"] = {{"srcc", held_out.srcc}, {"plcc", held_out.plcc}, {"n", held_out.n}};
  return ckpt;
}

}  // namespace qfm
