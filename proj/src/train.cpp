#include "qfm/train.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "qfm/error.hpp"
#include "qfm/ops.hpp"
#include "qfm/qcc.hpp"

namespace qfm {

namespace {

std::vector<std::size_t> draw_without_replacement(std::size_t pool, std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  n = std::min(n, pool);
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.index(pool - i)]);
  idx.resize(n);
  return idx;
}

Tensor stacked_mse(std::span<const Tensor> preds, std::span<const float> targets) {
  const Tensor p = ops::concat_rows(preds);
  const Tensor t({targets.size(), 1}, std::vector<float>(targets.begin(), targets.end()));
  const Tensor d = ops::sub(p, t);
  return ops::mean(ops::mul(d, d));
}

// Matching, mixing and decoding for one step once both memories are built.
class QueryProcessor {
 public:
  QueryProcessor(const TrainConfig& cfg, const ParamStore& params, const DualMemory& memory)
      : cfg_(cfg), params_(params), memory_(memory) {
    view_a_ = matching_view(memory.a, cfg.qfm.label_zscore, &std_a_);
    view_b_ = matching_view(memory.b, cfg.qfm.label_zscore, &std_b_);
    opts_ = MatchOptions{cfg.qfm.clamp_cos, cfg.qfm.match_mode};
  }

  const TemporaryMemory& view(bool from_b) const { return from_b ? view_b_ : view_a_; }

  // `self_in_b` says which memory holds the query itself (excluded there).
  void process(const FeatureMap& f, float target, std::size_t self_index, bool self_in_b) {
    const std::vector<float>& qfeat = view(self_in_b)[self_index].feature;
    const auto match = [&](bool from_b, std::size_t k) -> std::vector<std::size_t> {
      const TemporaryMemory& v = view(from_b);
      const std::optional<std::size_t> excl =
          from_b == self_in_b ? std::optional<std::size_t>(self_index) : std::nullopt;
      if (v.size() <= (excl ? 1u : 0u)) return {};
      const float qy = from_b ? std_b_(target) : std_a_(target);
      return match_topk(qfeat, qy, v, k, excl, opts_).indices;
    };
    const auto ia = match(false, cfg_.qfm.k_a);
    const auto ib = match(true, cfg_.qfm.k_b);

    if (cfg_.qfm.mode == QccMode::kLabelMix) {
      LabelMixWeights b{ia.empty() ? 0.0f : cfg_.qfm.beta1, ib.empty() ? 0.0f : cfg_.qfm.beta2};
      const float y1 = ia.empty() ? target : memory_.a[ia[0]].score;
      const float y2 = ib.empty() ? target : memory_.b[ib[0]].score;
      preds.push_back(decode(f, cfg_.model, params_));
      targets.push_back(mix_labels(target, y1, y2, b));
      return;
    }
    const std::size_t rows = f.rows(), cols = f.cols();
    std::vector<FeatureMap> ma, mb;
    for (std::size_t j : ia) ma.push_back(unflatten(memory_.a[j].feature, rows, cols));
    for (std::size_t j : ib) mb.push_back(unflatten(memory_.b[j].feature, rows, cols));
    const MixWeights w{cfg_.qfm.lambda1, cfg_.qfm.lambda2, std::max(cfg_.qfm.k_a, cfg_.qfm.k_b)};
    preds.push_back(decode(mix_features(f, ma, mb, w), cfg_.model, params_));
    targets.push_back(target);
    if (cfg_.qfm.additive_clean_loss) clean_preds.push_back(decode(f, cfg_.model, params_));
  }

  std::vector<Tensor> preds;
  std::vector<float> targets;
  std::vector<Tensor> clean_preds;

 private:
  const TrainConfig& cfg_;
  const ParamStore& params_;
  const DualMemory& memory_;
  TemporaryMemory view_a_, view_b_;
  ScoreStandardizer std_a_, std_b_;
  MatchOptions opts_;
};

}  // namespace

FitResult fit(const TrainConfig& cfg, const TrainingData& data, const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("fit: empty training set");
  std::vector<float> labels;
  labels.reserve(data.train.size());
  for (const Sample* s : data.train) {
    if (!s->score) throw ConfigError("fit: training sample " + s->id + " has no score");
    labels.push_back(*s->score);
  }
  FitResult result;
  result.scale = fit_label_scale(labels);

  const bool matching = cfg.qfm.enabled;
  const bool use_b = matching && cfg.dle.enabled;
  if (use_b && (data.teacher == nullptr || data.unlabeled.empty())) {
    throw ConfigError("distillation label extension needs a teacher and an unlabeled pool");
  }
  if (use_b) {
    const auto& te = data.teacher->config().encoder;
    const auto& se = cfg.model.encoder;
    if (te.image_size != se.image_size || te.channels != se.channels) {
      throw ConfigError("teacher and student disagree on image size or channels");
    }
  }

  const Rng root(cfg.seed);
  Rng init_rng = root.split("init");
  result.params = init_params(cfg.model, init_rng);
  ParamStore& params = result.params;
  AdamW optimizer(cfg.optim.adamw);
  const Rng shuffle_root = root.split("shuffle");
  const Rng unlabeled_root = root.split("unlabeled");

  std::vector<float> cached_pseudo;
  if (use_b && cfg.dle.cache) {
    std::vector<Tensor> images;
    for (const Sample* s : data.unlabeled) images.push_back(s->image);
    for (float mos : pseudo_label(*data.teacher, images).pseudo_scores) {
      cached_pseudo.push_back(result.scale.to_target(mos));
    }
  }

  DualMemory memory;
  std::size_t step = 0;
  const std::size_t bs = cfg.optim.batch_size;
  const std::size_t ubs = cfg.dle.unlabeled_batch_size ? cfg.dle.unlabeled_batch_size : bs;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const float lr = cfg.optim.lr_at(epoch);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = shuffle_root.split(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<const Sample*> batch_a;
      std::vector<float> targets_a;
      for (std::size_t i = start; i < end; ++i) {
        batch_a.push_back(data.train[order[i]]);
        targets_a.push_back(result.scale.to_target(*data.train[order[i]]->score));
      }
      std::vector<const Sample*> batch_b;
      std::vector<float> targets_b;
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = lr;
      try {
        Tape tape;
        std::vector<FeatureMap> feats_a;
        feats_a.reserve(batch_a.size());
        for (const Sample* s : batch_a) feats_a.push_back(encode(s->image, cfg.model, params));

        std::vector<Tensor> preds;
        std::vector<float> targets;
        std::vector<Tensor> clean_preds;
        if (!matching) {
          for (const FeatureMap& f : feats_a) preds.push_back(decode(f, cfg.model, params));
          targets = targets_a;
        } else {
          std::vector<FeatureMap> feats_b;
          if (use_b) {
            const auto picks = draw_without_replacement(data.unlabeled.size(), ubs,
                                                        unlabeled_root.split(step));
            for (std::size_t p : picks) batch_b.push_back(data.unlabeled[p]);
            if (cfg.dle.cache) {
              for (std::size_t p : picks) targets_b.push_back(cached_pseudo[p]);
            } else {
              std::vector<Tensor> images;
              for (const Sample* s : batch_b) images.push_back(s->image);
              for (float mos : pseudo_label(*data.teacher, images).pseudo_scores) {
                targets_b.push_back(result.scale.to_target(mos));
              }
            }
            if (cfg.dle.pseudo_queries) {
              for (const Sample* s : batch_b) feats_b.push_back(encode(s->image, cfg.model, params));
            } else {
              NoGradGuard no_grad;
              for (const Sample* s : batch_b) feats_b.push_back(encode(s->image, cfg.model, params));
            }
          }
          memory.a.ingest(feats_a, targets_a, "A");
          memory.b.ingest(feats_b, targets_b, "B");
          rec.batch_a = batch_a;
          rec.batch_b = batch_b;
          rec.targets_a = targets_a;
          rec.pseudo_targets = targets_b;
          rec.memory = &memory;
          if (hooks.after_memory) hooks.after_memory(rec, params);

          QueryProcessor qp(cfg, params, memory);
          for (std::size_t i = 0; i < feats_a.size(); ++i) qp.process(feats_a[i], targets_a[i], i, false);
          if (use_b && cfg.dle.pseudo_queries) {
            for (std::size_t j = 0; j < feats_b.size(); ++j) qp.process(feats_b[j], targets_b[j], j, true);
          }
          preds = std::move(qp.preds);
          targets = std::move(qp.targets);
          clean_preds = std::move(qp.clean_preds);
        }
        Tensor loss = stacked_mse(preds, targets);
        if (!clean_preds.empty()) loss = ops::add(loss, stacked_mse(clean_preds, targets));
        rec.loss = loss.item();
        tape.backward(loss);
        optimizer.step(params, lr);
      } catch (const Error& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                            ", batch starting at sample " + batch_a.front()->id + ": " + e.what());
      }
      loss_sum += rec.loss;
      ++batches;
      rec.batch_a = batch_a;
      rec.batch_b = batch_b;
      if (hooks.after_step) hooks.after_step(rec, params);
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
    if (cfg.eval_each_epoch && data.test.size() >= 2) {
      const RepeatMetrics m = evaluate(cfg.model, params, result.scale, data.test);
      log.test_srcc = m.srcc;
      log.test_plcc = m.plcc;
    }
    result.epochs.push_back(log);
  }
  result.steps = step;
  for (auto& [_, t] : params.entries()) t.clear_grad();
  return result;
}

std::vector<float> predict_all(const ModelConfig& cfg, const ParamStore& params,
                               const LabelScale& scale, std::span<const Sample* const> samples) {
  std::vector<float> out;
  out.reserve(samples.size());
  for (const Sample* s : samples) out.push_back(scale.to_mos(predict(s->image, cfg, params)));
  return out;
}

RepeatMetrics evaluate(const ModelConfig& cfg, const ParamStore& params, const LabelScale& scale,
                       std::span<const Sample* const> samples) {
  const auto preds = predict_all(cfg, params, scale, samples);
  std::vector<double> p(preds.begin(), preds.end()), y;
  y.reserve(samples.size());
  for (const Sample* s : samples) {
    if (!s->score) throw ConfigError("evaluate: sample " + s->id + " has no score");
    y.push_back(*s->score);
  }
  RepeatMetrics m;
  m.n = samples.size();
  m.plcc = plcc(p, y);
  m.srcc = srcc(p, y);
  return m;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const FitResult& result) {
  Checkpoint ckpt;
  ckpt.params = result.params.clone();
  ckpt.meta["model"] = to_json(cfg.model);
  ckpt.meta["label_scale"] = {{"mean", result.scale.mean}, {"std", result.scale.std}};
  ckpt.meta["config"] = to_json(cfg);
  ckpt.meta["steps"] = result.steps;
  return ckpt;
}

LoadedModel to_loaded_model(const Checkpoint& ckpt) {
  LoadedModel m;
  m.cfg = model_config_from_json(ckpt.meta.at("model"));
  m.params = ckpt.params.clone();
  m.params.set_requires_grad(false);
  if (ckpt.meta.contains("label_scale")) {
    m.scale.mean = ckpt.meta["label_scale"].at("mean").get<double>();
    m.scale.std = ckpt.meta["label_scale"].at("std").get<double>();
  }
  m.meta = ckpt.meta;
  return m;
}

LoadedModel load_model(const std::filesystem::path& path) {
  return to_loaded_model(load_checkpoint(path));
}

MetricReport evaluate_manifest(const LoadedModel& model, const Manifest& manifest) {
  manifest.validate(true);
  std::vector<const Sample*> samples;
  for (const Sample& s : manifest.samples) {
    if (!s.image.defined()) throw ConfigError("evaluate: image for " + s.id + " is not loaded");
    samples.push_back(&s);
  }
  MetricReport report;
  report.name = manifest.name;
  report.repeats.push_back(evaluate(model.cfg, model.params, model.scale, samples));
  report.finalize();
  return report;
}

std::vector<MetricReport> cross_dataset_eval(const LoadedModel& model,
                                             std::span<const Manifest> test_manifests,
                                             bool allow_same) {
  const std::string trained_on = model.meta.value("train_manifest", std::string());
  std::vector<MetricReport> out;
  for (const Manifest& m : test_manifests) {
    if (!allow_same && !trained_on.empty() && m.name == trained_on) {
      throw ConfigError("cross-eval: checkpoint was trained on '" + m.name +
                        "'; pass --allow-same to evaluate on it anyway");
    }
    out.push_back(evaluate_manifest(model, m));
  }
  return out;
}

RunInputs load_run_inputs(const TrainConfig& cfg) {
  if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is not set");
  RunInputs in{load_manifest(cfg.data.train_manifest), std::nullopt, std::nullopt};
  if (cfg.qfm.enabled && cfg.dle.enabled) {
    if (cfg.dle.unlabeled_manifest.empty() || cfg.dle.teacher_checkpoint.empty()) {
      throw ConfigError("dle.enabled needs dle.unlabeled_manifest and dle.teacher_checkpoint");
    }
    in.unlabeled = load_manifest(cfg.dle.unlabeled_manifest);
    in.teacher.emplace(load_teacher(cfg.dle.teacher_checkpoint));
  }
  return in;
}

void check_disjoint(std::span<const Sample* const> unlabeled, std::span<const std::string> test_ids) {
  const std::set<std::string> test(test_ids.begin(), test_ids.end());
  for (const Sample* s : unlabeled) {
    if (test.count(s->id)) {
      throw ConfigError("unlabeled pool sample " + s->id + " is also in the test split");
    }
  }
}

RunResult run_training(const TrainConfig& cfg, const RunInputs& inputs, bool write_outputs,
                       const TrainHooks& hooks) {
  cfg.validate();
  const Manifest& manifest = inputs.train;
  manifest.validate(true);
  std::unordered_map<std::string, const Sample*> by_id;
  for (const Sample& s : manifest.samples) by_id[s.id] = &s;

  RunResult run;
  run.report.name = manifest.name;
  const auto plans = split(manifest, cfg.data.train_fraction, cfg.data.repeats, cfg.data.split_seed);
  std::ostringstream header;
  header << "run on " << manifest.name << ": " << manifest.samples.size() << " samples, "
         << plans.size() << " repeat(s), qfm=" << (cfg.qfm.enabled ? "on" : "off")
         << ", dle=" << (cfg.qfm.enabled && cfg.dle.enabled ? "on" : "off");
  run.log.push_back(header.str());

  for (const SplitPlan& plan : plans) {
    TrainingData data;
    for (const auto& id : plan.train_ids) data.train.push_back(by_id.at(id));
    for (const auto& id : plan.test_ids) data.test.push_back(by_id.at(id));
    if (cfg.qfm.enabled && cfg.dle.enabled) {
      if (!inputs.unlabeled || !inputs.teacher) {
        throw ConfigError("dle.enabled but no unlabeled pool or teacher was provided");
      }
      for (const Sample& s : inputs.unlabeled->samples) data.unlabeled.push_back(&s);
      check_disjoint(data.unlabeled, plan.test_ids);
      data.teacher = &*inputs.teacher;
    }
    TrainConfig rc = cfg;
    rc.seed = cfg.seed + plan.repeat;
    FitResult fr = fit(rc, data, hooks);

    RepeatResult rr;
    rr.plan = plan;
    rr.metrics = evaluate(rc.model, fr.params, fr.scale, data.test);
    rr.metrics.repeat = plan.repeat;
    rr.epochs = fr.epochs;
    for (const EpochLog& e : fr.epochs) {
      std::ostringstream os;
      os << "repeat " << plan.repeat << " epoch " << e.epoch << " lr " << e.lr << " loss "
         << e.train_loss;
      if (e.test_srcc) os << " test_srcc " << *e.test_srcc << " test_plcc " << *e.test_plcc;
      run.log.push_back(os.str());
    }
    std::ostringstream os;
    os << "repeat " << plan.repeat << " final test SRCC " << rr.metrics.srcc << " PLCC "
       << rr.metrics.plcc << " (n=" << rr.metrics.n << ")";
    run.log.push_back(os.str());

    if (write_outputs) {
      Checkpoint ckpt = make_checkpoint(rc, fr);
      ckpt.meta["train_manifest"] = manifest.name;
      ckpt.meta["repeat"] = plan.repeat;
      ckpt.meta["test_ids"] = plan.test_ids;
      rr.checkpoint = cfg.output_dir / ("repeat" + std::to_string(plan.repeat) + ".qfmckpt");
      save_checkpoint(rr.checkpoint, ckpt);
    }
    rr.params = std::move(fr.params);
    rr.scale = fr.scale;
    run.report.repeats.push_back(rr.metrics);
    run.repeats.push_back(std::move(rr));
  }
  run.report.finalize();

  if (write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "run.log") << [&] {
      std::string s;
      for (const auto& l : run.log) s += l + "\n";
      return s;
    }();
    std::ofstream(cfg.output_dir / "report.txt") << format_report(run.report);
    nlohmann::json summary = {{"config", to_json(cfg)}, {"report", to_json(run.report)}};
    nlohmann::json curves = nlohmann::json::array();
    for (const RepeatResult& rr : run.repeats) {
      nlohmann::json epochs = nlohmann::json::array();
      for (const EpochLog& e : rr.epochs) {
        nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}};
        if (e.test_srcc) j["test_srcc"] = *e.test_srcc;
        if (e.test_plcc) j["test_plcc"] = *e.test_plcc;
        epochs.push_back(j);
      }
      curves.push_back({{"repeat", rr.plan.repeat},
                        {"checkpoint", rr.checkpoint.string()},
                        {"epochs", epochs}});
    }
    summary["repeats"] = curves;
    std::ofstream(cfg.output_dir / "summary.json") << summary.dump(2) << '\n';
  }
  return run;
}

}  // namespace qfm
