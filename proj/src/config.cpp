#include "qfm/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "qfm/error.hpp"

namespace qfm {

float OptimConfig::lr_at(std::size_t epoch) const {
  if (decay_every == 0) return adamw.lr;
  const auto drops = static_cast<float>(epoch / decay_every);
  return adamw.lr / std::pow(decay_factor, drops);
}

void TrainConfig::validate() const {
  model.validate();
  if (optim.batch_size == 0) throw ConfigError("optim.batch_size must be positive");
  if (optim.epochs == 0) throw ConfigError("optim.epochs must be positive");
  if (!(optim.adamw.lr > 0.0f)) throw ConfigError("optim.lr must be positive");
  if (!(optim.decay_factor > 0.0f)) throw ConfigError("optim.decay_factor must be positive");
  MixWeights{qfm.lambda1, qfm.lambda2, std::max<std::size_t>(1, qfm.k_a)}.validate();
  if (qfm.k_a == 0 || qfm.k_b == 0) throw ConfigError("qfm.k_a and qfm.k_b must be at least 1");
  LabelMixWeights{qfm.beta1, qfm.beta2}.validate();
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw ConfigError("data.train_fraction must be in (0, 1)");
  }
  if (data.repeats == 0) throw ConfigError("data.repeats must be positive");
}

std::string to_string(MatchMode m) {
  switch (m) {
    case MatchMode::kFeatureScore: return "feature_score";
    case MatchMode::kQualityOnly: return "quality_only";
    case MatchMode::kFeatureOnly: return "feature_only";
  }
  return "feature_score";
}

MatchMode parse_match_mode(const std::string& s) {
  if (s == "feature_score") return MatchMode::kFeatureScore;
  if (s == "quality_only") return MatchMode::kQualityOnly;
  if (s == "feature_only") return MatchMode::kFeatureOnly;
  throw ConfigError("unknown match mode '" + s + "'");
}

namespace {

// Dotted key -> setter from its string form. The same table serves YAML
// loading and command-line overrides.
using Setter = std::function<void(TrainConfig&, const std::string&, const std::filesystem::path&)>;

std::uint64_t to_u64(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long r = std::stoull(v, &pos);
  if (pos != v.size()) throw ConfigError("not an integer: " + v);
  return r;
}

float to_float(const std::string& v) {
  std::size_t pos = 0;
  const float r = std::stof(v, &pos);
  if (pos != v.size()) throw ConfigError("not a number: " + v);
  return r;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("not a boolean: " + v);
}

std::filesystem::path to_path(const std::string& v, const std::filesystem::path& base) {
  std::filesystem::path p(v);
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto sz = [&t](const std::string& key, auto field) {
      t[key] = [field](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
        field(c) = static_cast<std::size_t>(to_u64(v));
      };
    };
    auto fl = [&t](const std::string& key, auto field) {
      t[key] = [field](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
        field(c) = to_float(v);
      };
    };
    auto bo = [&t](const std::string& key, auto field) {
      t[key] = [field](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
        field(c) = to_bool(v);
      };
    };
    auto pa = [&t](const std::string& key, auto field) {
      t[key] = [field](TrainConfig& c, const std::string& v, const std::filesystem::path& base) {
        field(c) = to_path(v, base);
      };
    };
    sz("model.image_size", [](TrainConfig& c) -> auto& { return c.model.encoder.image_size; });
    sz("model.patch_size", [](TrainConfig& c) -> auto& { return c.model.encoder.patch_size; });
    sz("model.channels", [](TrainConfig& c) -> auto& { return c.model.encoder.channels; });
    sz("model.embed_dim", [](TrainConfig& c) -> auto& { return c.model.encoder.embed_dim; });
    sz("model.num_layers", [](TrainConfig& c) -> auto& { return c.model.encoder.num_layers; });
    sz("model.num_heads", [](TrainConfig& c) -> auto& { return c.model.encoder.num_heads; });
    sz("model.mlp_ratio", [](TrainConfig& c) -> auto& { return c.model.encoder.mlp_ratio; });
    sz("model.decoder_queries", [](TrainConfig& c) -> auto& { return c.model.decoder.num_queries; });
    sz("model.decoder_layers", [](TrainConfig& c) -> auto& { return c.model.decoder.num_layers; });
    fl("model.ln_eps", [](TrainConfig& c) -> auto& { return c.model.ln_eps; });
    fl("model.init_std", [](TrainConfig& c) -> auto& { return c.model.init_std; });
    fl("model.pixel_mean", [](TrainConfig& c) -> auto& { return c.model.pixel_mean; });
    fl("model.pixel_std", [](TrainConfig& c) -> auto& { return c.model.pixel_std; });

    fl("optim.lr", [](TrainConfig& c) -> auto& { return c.optim.adamw.lr; });
    fl("optim.beta1", [](TrainConfig& c) -> auto& { return c.optim.adamw.beta1; });
    fl("optim.beta2", [](TrainConfig& c) -> auto& { return c.optim.adamw.beta2; });
    fl("optim.eps", [](TrainConfig& c) -> auto& { return c.optim.adamw.eps; });
    fl("optim.weight_decay", [](TrainConfig& c) -> auto& { return c.optim.adamw.weight_decay; });
    sz("optim.epochs", [](TrainConfig& c) -> auto& { return c.optim.epochs; });
    sz("optim.decay_every", [](TrainConfig& c) -> auto& { return c.optim.decay_every; });
    fl("optim.decay_factor", [](TrainConfig& c) -> auto& { return c.optim.decay_factor; });
    sz("optim.batch_size", [](TrainConfig& c) -> auto& { return c.optim.batch_size; });

    bo("qfm.enabled", [](TrainConfig& c) -> auto& { return c.qfm.enabled; });
    t["qfm.match_mode"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.qfm.match_mode = parse_match_mode(v);
    };
    bo("qfm.clamp_cos", [](TrainConfig& c) -> auto& { return c.qfm.clamp_cos; });
    bo("qfm.label_zscore", [](TrainConfig& c) -> auto& { return c.qfm.label_zscore; });
    fl("qfm.lambda1", [](TrainConfig& c) -> auto& { return c.qfm.lambda1; });
    fl("qfm.lambda2", [](TrainConfig& c) -> auto& { return c.qfm.lambda2; });
    sz("qfm.k_a", [](TrainConfig& c) -> auto& { return c.qfm.k_a; });
    sz("qfm.k_b", [](TrainConfig& c) -> auto& { return c.qfm.k_b; });
    t["qfm.K"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.qfm.k_a = c.qfm.k_b = static_cast<std::size_t>(to_u64(v));
    };
    t["qfm.lambda"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.qfm.lambda1 = c.qfm.lambda2 = to_float(v);
    };
    t["qfm.mode"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      if (v == "feature_mix") c.qfm.mode = QccMode::kFeatureMix;
      else if (v == "label_mix") c.qfm.mode = QccMode::kLabelMix;
      else throw ConfigError("unknown qfm.mode '" + v + "'");
    };
    fl("qfm.beta1", [](TrainConfig& c) -> auto& { return c.qfm.beta1; });
    fl("qfm.beta2", [](TrainConfig& c) -> auto& { return c.qfm.beta2; });
    bo("qfm.additive_clean_loss", [](TrainConfig& c) -> auto& { return c.qfm.additive_clean_loss; });

    bo("dle.enabled", [](TrainConfig& c) -> auto& { return c.dle.enabled; });
    pa("dle.teacher_checkpoint", [](TrainConfig& c) -> auto& { return c.dle.teacher_checkpoint; });
    pa("dle.unlabeled_manifest", [](TrainConfig& c) -> auto& { return c.dle.unlabeled_manifest; });
    sz("dle.unlabeled_batch_size", [](TrainConfig& c) -> auto& { return c.dle.unlabeled_batch_size; });
    bo("dle.pseudo_queries", [](TrainConfig& c) -> auto& { return c.dle.pseudo_queries; });
    bo("dle.cache", [](TrainConfig& c) -> auto& { return c.dle.cache; });

    pa("data.train_manifest", [](TrainConfig& c) -> auto& { return c.data.train_manifest; });
    t["data.train_fraction"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.data.train_fraction = std::stod(v);
    };
    sz("data.repeats", [](TrainConfig& c) -> auto& { return c.data.repeats; });
    t["data.split_seed"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.data.split_seed = to_u64(v);
    };

    t["seed"] = [](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
      c.seed = to_u64(v);
    };
    pa("output_dir", [](TrainConfig& c) -> auto& { return c.output_dir; });
    bo("eval_each_epoch", [](TrainConfig& c) -> auto& { return c.eval_each_epoch; });
    return t;
  }();
  return table;
}

void set_key(TrainConfig& cfg, const std::string& key, const std::string& value,
             const std::filesystem::path& base) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second(cfg, value, base);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad value '" + value + "' for " + key + ": " + e.what());
  }
}

void walk(const YAML::Node& node, const std::string& prefix, TrainConfig& cfg,
          const std::filesystem::path& base) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string key = kv.first.as<std::string>();
      walk(kv.second, prefix.empty() ? key : prefix + "." + key, cfg, base);
    }
  } else if (node.IsScalar()) {
    set_key(cfg, prefix, node.as<std::string>(), base);
  } else if (!node.IsNull()) {
    throw ConfigError("config key '" + prefix + "' must be a scalar or a section");
  }
}

}  // namespace

TrainConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  TrainConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  walk(root, "", cfg, base_dir);
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + assignment);
  set_key(cfg, assignment.substr(0, eq), assignment.substr(eq + 1), {});
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"model", to_json(c.model)},
      {"optim",
       {{"lr", c.optim.adamw.lr},
        {"beta1", c.optim.adamw.beta1},
        {"beta2", c.optim.adamw.beta2},
        {"eps", c.optim.adamw.eps},
        {"weight_decay", c.optim.adamw.weight_decay},
        {"epochs", c.optim.epochs},
        {"decay_every", c.optim.decay_every},
        {"decay_factor", c.optim.decay_factor},
        {"batch_size", c.optim.batch_size}}},
      {"qfm",
       {{"enabled", c.qfm.enabled},
        {"match_mode", to_string(c.qfm.match_mode)},
        {"clamp_cos", c.qfm.clamp_cos},
        {"label_zscore", c.qfm.label_zscore},
        {"lambda1", c.qfm.lambda1},
        {"lambda2", c.qfm.lambda2},
        {"k_a", c.qfm.k_a},
        {"k_b", c.qfm.k_b},
        {"mode", c.qfm.mode == QccMode::kFeatureMix ? "feature_mix" : "label_mix"},
        {"beta1", c.qfm.beta1},
        {"beta2", c.qfm.beta2},
        {"additive_clean_loss", c.qfm.additive_clean_loss}}},
      {"dle",
       {{"enabled", c.dle.enabled},
        {"teacher_checkpoint", c.dle.teacher_checkpoint.string()},
        {"unlabeled_manifest", c.dle.unlabeled_manifest.string()},
        {"unlabeled_batch_size", c.dle.unlabeled_batch_size},
        {"pseudo_queries", c.dle.pseudo_queries},
        {"cache", c.dle.cache}}},
      {"data",
       {{"train_manifest", c.data.train_manifest.string()},
        {"train_fraction", c.data.train_fraction},
        {"repeats", c.data.repeats},
        {"split_seed", c.data.split_seed}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"eval_each_epoch", c.eval_each_epoch},
  };
}

std::string to_yaml(const TrainConfig& cfg) {
  const nlohmann::json j = to_json(cfg);
  std::ostringstream os;
  for (const auto& [section, value] : j.items()) {
    if (value.is_object()) {
      os << section << ":\n";
      for (const auto& [k, v] : value.items()) {
        os << "  " << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
      }
    } else {
      os << section << ": " << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
    }
  }
  return os.str();
}

}  // namespace qfm
