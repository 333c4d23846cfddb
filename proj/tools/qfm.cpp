// Command-line front end: data generation, training, evaluation and analysis.
#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>

#include "qfm/checkpoint.hpp"
#include "qfm/config.hpp"
#include "qfm/confusion.hpp"
#include "qfm/data.hpp"
#include "qfm/dle.hpp"
#include "qfm/error.hpp"
#include "qfm/report.hpp"
#include "qfm/snm.hpp"
#include "qfm/train.hpp"

namespace fs = std::filesystem;
using namespace qfm;

namespace {

TrainConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// Restricts a manifest to the ids a checkpoint held out, when it recorded any.
Manifest held_out_part(const Manifest& m, const LoadedModel& model) {
  if (!model.meta.contains("test_ids")) return m;
  const auto ids = model.meta["test_ids"].get<std::set<std::string>>();
  Manifest out = m;
  std::erase_if(out.samples, [&](const Sample& s) { return !ids.count(s.id); });
  if (out.samples.empty()) throw ConfigError("none of the checkpoint's test ids are in " + m.name);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate no-reference image quality models"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic distorted-image manifest");
  SyntheticOptions gen_opts;
  fs::path gen_out;
  bool gen_unlabeled = false;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--contents", gen_opts.n_contents, "Number of reference contents");
  gen->add_option("--distortions-per-content", gen_opts.distortions_per_content);
  gen->add_option("--seed", gen_opts.seed);
  gen->add_option("--size", gen_opts.image_size, "Image side length");
  gen->add_option("--name", gen_opts.name, "Manifest name");
  gen->add_option("--id-prefix", gen_opts.id_prefix);
  gen->add_flag("--unlabeled", gen_unlabeled, "Omit scores");

  // pretrain-teacher
  auto* pre = app.add_subcommand("pretrain-teacher", "Train a frozen teacher on a labeled pool");
  std::string pre_config;
  std::vector<std::string> pre_set;
  fs::path pre_manifest, pre_out;
  pre->add_option("--manifest", pre_manifest)->required()->check(CLI::ExistingFile);
  pre->add_option("--config", pre_config)->check(CLI::ExistingFile);
  pre->add_option("--set", pre_set, "key=value overrides");
  pre->add_option("--out", pre_out, "Checkpoint path")->required();

  // train
  auto* train = app.add_subcommand("train", "Train and evaluate under the split protocol");
  std::string train_config;
  std::vector<std::string> train_set, train_sweep;
  train->add_option("--config", train_config)->check(CLI::ExistingFile);
  train->add_option("--set", train_set, "key=value overrides");
  train->add_option("--sweep", train_sweep, "key=v1,v2,... (repeatable, cartesian product)");

  // eval / cross-eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on labeled manifests");
  auto* cross = app.add_subcommand("cross-eval", "Evaluate on manifests other than the training one");
  fs::path eval_ckpt, eval_json;
  std::vector<fs::path> eval_manifests;
  bool allow_same = false;
  for (auto* sub : {eval, cross}) {
    sub->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", eval_manifests)->required()->check(CLI::ExistingFile);
    sub->add_option("--json", eval_json, "Write the reports as JSON");
  }
  cross->add_flag("--allow-same", allow_same, "Permit the training manifest");

  // match-debug
  auto* dbg = app.add_subcommand("match-debug", "Show the feature-score matrix of one batch");
  fs::path dbg_ckpt, dbg_manifest;
  std::size_t dbg_batch = 8, dbg_offset = 0, dbg_k = 1;
  bool dbg_no_clamp = false, dbg_no_zscore = false;
  std::string dbg_mode = "feature_score";
  dbg->add_option("--checkpoint", dbg_ckpt)->required()->check(CLI::ExistingFile);
  dbg->add_option("--manifest", dbg_manifest)->required()->check(CLI::ExistingFile);
  dbg->add_option("--batch", dbg_batch);
  dbg->add_option("--offset", dbg_offset);
  dbg->add_option("-k", dbg_k);
  dbg->add_option("--mode", dbg_mode, "feature_score, quality_only or feature_only");
  dbg->add_flag("--no-clamp", dbg_no_clamp);
  dbg->add_flag("--no-zscore", dbg_no_zscore);

  // confusion
  auto* conf = app.add_subcommand("confusion", "Nearest-feature pair histogram");
  fs::path conf_ckpt, conf_manifest, conf_json;
  ConfusionOptions conf_opts;
  double conf_threshold = -1;
  bool conf_all = false;
  conf->add_option("--checkpoint", conf_ckpt)->required()->check(CLI::ExistingFile);
  conf->add_option("--manifest", conf_manifest)->required()->check(CLI::ExistingFile);
  conf->add_option("--buckets", conf_opts.buckets);
  conf->add_option("--edges", conf_opts.edges, "Explicit bucket edges");
  conf->add_option("--threshold", conf_threshold, "Label gap counted as confused");
  conf->add_flag("--all", conf_all, "Use every sample, not only the checkpoint's test split");
  conf->add_option("--json", conf_json);

  // report
  auto* rep = app.add_subcommand("report", "Render SVG plots from a run directory");
  fs::path rep_run, rep_confusion, rep_out;
  rep->add_option("--run", rep_run, "Directory holding summary.json")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--confusion", rep_confusion, "JSON written by `confusion --json`");
  rep->add_option("--out", rep_out, "Output directory (default: the run directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      gen_opts.labeled = !gen_unlabeled;
      const Manifest m = generate_synthetic(gen_opts, gen_out);
      std::cout << "wrote " << m.samples.size() << " samples to " << (gen_out / "manifest.csv") << "\n";
    } else if (*pre) {
      const TrainConfig cfg = build_config(pre_config, pre_set);
      const Manifest pool = load_manifest(pre_manifest);
      const Checkpoint ckpt = pretrain_teacher(pool, cfg);
      save_checkpoint(pre_out, ckpt);
      std::cout << "teacher " << pre_out << " held-out " << ckpt.meta["teacher_eval"].dump() << "\n";
    } else if (*train) {
      const TrainConfig base = build_config(train_config, train_set);
      if (train_sweep.empty()) {
        const RunResult run = run_training(base, load_run_inputs(base));
        for (const auto& line : run.log) std::cout << line << "\n";
        std::cout << format_report(run.report);
      } else {
        std::vector<SweepRow> rows;
        const auto combos = expand_sweep(train_sweep);
        for (std::size_t i = 0; i < combos.size(); ++i) {
          TrainConfig cfg = base;
          for (const auto& o : combos[i]) apply_override(cfg, o);
          cfg.output_dir = base.output_dir / ("setting" + std::to_string(i));
          cfg.validate();
          const RunResult run = run_training(cfg, load_run_inputs(cfg));
          rows.push_back({combos[i], run.report});
          std::cout << "[" << i + 1 << "/" << combos.size() << "] " << format_sweep_table({rows.back()});
        }
        const std::string table = format_sweep_table(rows);
        write_text(base.output_dir / "sweep.txt", table);
        write_text(base.output_dir / "sweep.json", sweep_to_json(rows).dump(2) + "\n");
        std::cout << table;
      }
    } else if (*eval || *cross) {
      const LoadedModel model = load_model(eval_ckpt);
      std::vector<Manifest> manifests;
      for (const auto& p : eval_manifests) manifests.push_back(load_manifest(p));
      const auto reports = *cross ? cross_dataset_eval(model, manifests, allow_same)
                                  : [&] {
                                      std::vector<MetricReport> r;
                                      for (const auto& m : manifests) r.push_back(evaluate_manifest(model, m));
                                      return r;
                                    }();
      nlohmann::json all = nlohmann::json::array();
      for (const auto& r : reports) {
        std::cout << format_report(r);
        all.push_back(to_json(r));
      }
      if (!eval_json.empty()) write_text(eval_json, all.dump(2) + "\n");
    } else if (*dbg) {
      const LoadedModel model = load_model(dbg_ckpt);
      const Manifest m = load_manifest(dbg_manifest);
      if (dbg_offset >= m.samples.size()) throw ConfigError("--offset is past the end of the manifest");
      const std::size_t end = std::min(m.samples.size(), dbg_offset + dbg_batch);
      std::vector<FeatureMap> feats;
      std::vector<float> scores;
      {
        NoGradGuard no_grad;
        for (std::size_t i = dbg_offset; i < end; ++i) {
          const Sample& s = m.samples[i];
          feats.push_back(encode(s.image, model.cfg, model.params));
          scores.push_back(s.score ? model.scale.to_target(*s.score)
                                   : model.scale.to_target(model.scale.to_mos(predict(s.image, model.cfg, model.params))));
        }
      }
      TemporaryMemory mem;
      mem.ingest(feats, scores, "A");
      ScoreStandardizer st;
      const TemporaryMemory view = matching_view(mem, !dbg_no_zscore, &st);
      const MatchOptions opts{!dbg_no_clamp, parse_match_mode(dbg_mode)};
      const auto fsm = feature_score_matrix(view, opts);
      std::cout << "feature-score matrix (" << to_string(opts.mode) << ", rows = queries)\n";
      std::cout << std::fixed << std::setprecision(4);
      for (std::size_t i = 0; i < fsm.size(); ++i) {
        std::cout << std::setw(12) << m.samples[dbg_offset + i].id.substr(0, 12);
        for (float v : fsm[i]) std::cout << std::setw(9) << v;
        std::cout << "\n";
      }
      for (std::size_t i = 0; i < view.size(); ++i) {
        const auto r = match_topk(view[i].feature, view[i].score, view, dbg_k, i, opts);
        std::cout << m.samples[dbg_offset + i].id << " ->";
        for (std::size_t j = 0; j < r.indices.size(); ++j) {
          std::cout << " " << m.samples[dbg_offset + r.indices[j]].id << " (S=" << r.scores[j] << ")";
        }
        std::cout << "\n";
      }
    } else if (*conf) {
      const LoadedModel model = load_model(conf_ckpt);
      Manifest m = load_manifest(conf_manifest);
      if (!conf_all) m = held_out_part(m, model);
      if (conf_threshold >= 0) conf_opts.gap_threshold = conf_threshold;
      const ConfusionHistogram h = confusion_histogram(model, m, conf_opts);
      std::cout << format_confusion(h);
      if (!conf_json.empty()) write_text(conf_json, to_json(h).dump(2) + "\n");
    } else if (*rep) {
      std::ifstream f(rep_run / "summary.json");
      if (!f) throw IoError("no summary.json in " + rep_run.string());
      const nlohmann::json summary = nlohmann::json::parse(f);
      std::optional<ConfusionHistogram> h;
      if (!rep_confusion.empty()) {
        std::ifstream cf(rep_confusion);
        if (!cf) throw IoError("cannot read " + rep_confusion.string());
        h = confusion_from_json(nlohmann::json::parse(cf));
      }
      for (const auto& p : write_plots(summary, h ? &*h : nullptr, rep_out.empty() ? rep_run : rep_out)) {
        std::cout << "wrote " << p.string() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
