#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "qfm/checkpoint.hpp"
#include "qfm/error.hpp"
#include "qfm/train.hpp"

using namespace qfm;
using namespace qfm::testing;

namespace {

std::vector<std::string> digests_per_step(const TrainConfig& cfg, const TrainingData& data) {
  std::vector<std::string> out;
  TrainHooks hooks;
  hooks.after_step = [&](const StepRecord&, const ParamStore& p) { out.push_back(p.digest()); };
  fit(cfg, data, hooks);
  return out;
}

}  // namespace

TEST(Fit, DeterministicForSeed) {
  const Manifest m = tiny_manifest(1, "");
  const TrainConfig cfg = tiny_config();
  const TrainingData data{pointers(m), {}, {}, nullptr};
  const FitResult a = fit(cfg, data), b = fit(cfg, data);
  EXPECT_EQ(a.params.digest(), b.params.digest());
  EXPECT_EQ(a.steps, 12u);  // 24 samples, batch 4, 2 epochs
  TrainConfig other = cfg;
  other.seed = 1;
  EXPECT_NE(fit(other, data).params.digest(), a.params.digest());
}

TEST(Fit, ZeroLambdaMatchesBaselineEveryStep) {
  const Manifest m = tiny_manifest(2, "");
  TrainConfig base = tiny_config();
  const TrainingData data{pointers(m), {}, {}, nullptr};
  TrainConfig q = base;
  q.qfm.enabled = true;
  q.qfm.lambda1 = q.qfm.lambda2 = 0;
  q.qfm.k_a = 3;
  EXPECT_EQ(digests_per_step(q, data), digests_per_step(base, data));
  q.qfm.lambda1 = 0.1f;
  EXPECT_NE(digests_per_step(q, data).back(), digests_per_step(base, data).back());
}

TEST(Fit, MemoryHoldsCurrentBatchOnly) {
  const Manifest m = tiny_manifest(3, "");
  const Manifest pool = tiny_manifest(4, "u", 4, 4, false);
  TrainConfig teacher_cfg = tiny_config();
  Rng rng(9);
  Checkpoint tc{init_params(teacher_cfg.model, rng), {{"model", to_json(teacher_cfg.model)}}};
  const Teacher teacher(tc);
  TrainConfig cfg = tiny_config();
  cfg.qfm.enabled = true;
  cfg.qfm.lambda1 = cfg.qfm.lambda2 = 0.1f;
  cfg.dle.enabled = true;
  cfg.dle.unlabeled_batch_size = 3;
  std::size_t checked = 0;
  TrainHooks hooks;
  hooks.after_memory = [&](const StepRecord& r, const ParamStore& p) {
    ASSERT_EQ(r.memory->a.size(), r.batch_a.size());
    ASSERT_EQ(r.memory->b.size(), 3u);
    NoGradGuard ng;
    for (std::size_t i = 0; i < r.batch_a.size(); ++i) {
      EXPECT_EQ(r.memory->a[i].feature, flatten(encode(r.batch_a[i]->image, cfg.model, p)));
      EXPECT_EQ(r.memory->a[i].score, r.targets_a[i]);
    }
    for (std::size_t j = 0; j < r.batch_b.size(); ++j) {
      EXPECT_EQ(r.memory->b[j].feature, flatten(encode(r.batch_b[j]->image, cfg.model, p)));
    }
    ++checked;
  };
  fit(cfg, {pointers(m), {}, pointers(pool), &teacher}, hooks);
  EXPECT_EQ(checked, 12u);
}

TEST(Fit, ErrorsCarryStepContext) {
  Manifest m = tiny_manifest(5, "");
  m.samples[7].image = Tensor({3, 4, 4});
  TrainConfig cfg = tiny_config();
  cfg.optim.batch_size = 24;
  try {
    fit(cfg, {pointers(m), {}, {}, nullptr});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0, step 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("sample"), std::string::npos) << msg;
  }
}

TEST(Fit, LabelMixAndFeatureOnlyModesRun) {
  const Manifest m = tiny_manifest(6, "");
  TrainConfig cfg = tiny_config();
  cfg.optim.epochs = 1;
  cfg.qfm.enabled = true;
  cfg.qfm.mode = QccMode::kLabelMix;
  EXPECT_EQ(fit(cfg, {pointers(m), {}, {}, nullptr}).steps, 6u);
  cfg.qfm.mode = QccMode::kFeatureMix;
  cfg.qfm.match_mode = MatchMode::kFeatureOnly;
  cfg.qfm.lambda1 = 0.3f;
  cfg.qfm.additive_clean_loss = true;
  EXPECT_EQ(fit(cfg, {pointers(m), {}, {}, nullptr}).steps, 6u);
}

TEST(Inference, IndependentOfTrainingModules) {
  const Manifest m = tiny_manifest(7, "");
  TrainConfig cfg = tiny_config();
  cfg.qfm.enabled = true;
  cfg.qfm.lambda1 = 0.2f;
  const FitResult r = fit(cfg, {pointers(m), {}, {}, nullptr});
  const Checkpoint ckpt = make_checkpoint(cfg, r);
  const LoadedModel a = to_loaded_model(ckpt);
  TrainConfig off = cfg;
  off.qfm.enabled = false;
  const LoadedModel b = to_loaded_model(decode_checkpoint(encode_checkpoint(make_checkpoint(off, r))));
  const auto ptrs = pointers(m);
  EXPECT_EQ(predict_all(a.cfg, a.params, a.scale, ptrs), predict_all(b.cfg, b.params, b.scale, ptrs));
  EXPECT_EQ(predict_all(a.cfg, a.params, a.scale, ptrs), predict_all(cfg.model, r.params, r.scale, ptrs));
}

TEST(CrossEval, MatchesSingleEvaluationAndGuardsTrainingSet) {
  const Manifest train = tiny_manifest(8, "t");
  const Manifest x = tiny_manifest(9, "x"), y = tiny_manifest(10, "y");
  TrainConfig cfg = tiny_config();
  const FitResult r = fit(cfg, {pointers(train), {}, {}, nullptr});
  Checkpoint ckpt = make_checkpoint(cfg, r);
  ckpt.meta["train_manifest"] = train.name;
  const LoadedModel model = to_loaded_model(ckpt);
  const std::vector<Manifest> tests{x, y};
  const auto reports = cross_dataset_eval(model, tests);
  ASSERT_EQ(reports.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const MetricReport single = evaluate_manifest(model, tests[i]);
    EXPECT_EQ(reports[i].name, tests[i].name);
    EXPECT_EQ(reports[i].headline_srcc(), single.headline_srcc());
    EXPECT_EQ(reports[i].headline_plcc(), single.headline_plcc());
  }
  const std::vector<Manifest> same{train};
  EXPECT_THROW(cross_dataset_eval(model, same), ConfigError);
  EXPECT_EQ(cross_dataset_eval(model, same, true).size(), 1u);
  EXPECT_EQ(model.params.digest(), ckpt.params.digest());
}

TEST(RunTraining, WritesOutputsPerRepeat) {
  RunInputs in{tiny_manifest(11, ""), std::nullopt, std::nullopt};
  TrainConfig cfg = tiny_config();
  cfg.optim.epochs = 1;
  cfg.data.repeats = 2;
  cfg.data.train_fraction = 0.5;
  cfg.eval_each_epoch = true;
  cfg.output_dir = std::filesystem::temp_directory_path() / "qfm_run_test";
  std::filesystem::remove_all(cfg.output_dir);
  const RunResult res = run_training(cfg, in);
  ASSERT_EQ(res.report.repeats.size(), 2u);
  for (const char* f : {"repeat0.qfmckpt", "repeat1.qfmckpt", "run.log", "report.txt", "summary.json"}) {
    EXPECT_TRUE(std::filesystem::exists(cfg.output_dir / f)) << f;
  }
  const LoadedModel m = load_model(cfg.output_dir / "repeat1.qfmckpt");
  EXPECT_EQ(m.params.digest(), res.repeats[1].params.digest());
  EXPECT_EQ(m.meta["test_ids"].size(), res.repeats[1].plan.test_ids.size());
  std::ifstream s(cfg.output_dir / "summary.json");
  const auto summary = nlohmann::json::parse(s);
  EXPECT_EQ(summary["repeats"].size(), 2u);
  EXPECT_EQ(summary["report"]["repeat_count"], 2);
  std::filesystem::remove_all(cfg.output_dir);
}
