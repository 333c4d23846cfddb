#include "qfm/confusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qfm/error.hpp"
#include "qfm/snm.hpp"
#include "qfm/train.hpp"

namespace qfm {

std::vector<double> quantile_edges(std::span<const double> labels, std::size_t buckets) {
  if (buckets == 0) throw ConfigError("confusion: bucket count must be positive");
  std::vector<double> dist;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) dist.push_back(std::abs(labels[i] - labels[j]));
  }
  if (dist.empty()) return {0.0, 1.0};
  std::sort(dist.begin(), dist.end());
  std::vector<double> edges{0.0};
  for (std::size_t b = 1; b <= buckets; ++b) {
    const double pos = static_cast<double>(b) / static_cast<double>(buckets) *
                       static_cast<double>(dist.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, dist.size() - 1);
    const double e = dist[lo] + (pos - static_cast<double>(lo)) * (dist[hi] - dist[lo]);
    if (e > edges.back()) edges.push_back(e);
  }
  if (edges.size() < 2) edges.push_back(1.0);
  return edges;
}

ConfusionHistogram confusion_histogram(std::span<const std::vector<float>> features,
                                       std::span<const double> labels,
                                       const ConfusionOptions& opts,
                                       std::span<const double> predictions) {
  const std::size_t n = features.size();
  if (labels.size() != n) throw ShapeError("confusion: features and labels differ in length");
  if (!predictions.empty() && predictions.size() != n) {
    throw ShapeError("confusion: predictions and labels differ in length");
  }
  if (n < 2) throw DegenerateInputError("confusion: need at least 2 images");

  ConfusionHistogram h;
  h.edges = opts.edges.empty() ? quantile_edges(labels, opts.buckets) : opts.edges;
  if (h.edges.size() < 2 || !std::is_sorted(h.edges.begin(), h.edges.end()) ||
      std::adjacent_find(h.edges.begin(), h.edges.end()) != h.edges.end()) {
    throw ConfigError("confusion: bucket edges must be strictly increasing with at least 2 values");
  }
  h.counts.assign(h.edges.size() - 1, 0);
  if (opts.gap_threshold) {
    h.gap_threshold = *opts.gap_threshold;
  } else {
    const auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
    h.gap_threshold = 0.3 * (*hi - *lo);
  }

  std::vector<std::vector<float>> normed;
  normed.reserve(n);
  for (const auto& f : features) {
    normed.push_back(opts.layer_norm ? layer_normalize(f) : f);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    double best_sim = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = cosine_similarity(normed[i], normed[j]);
      if (best == n || s > best_sim) {
        best = j;
        best_sim = s;
      }
    }
    ConfusionPair p{i, best, best_sim, std::abs(labels[i] - labels[best]), std::nullopt};
    if (!predictions.empty()) p.pred_error = std::abs(predictions[i] - labels[i]);
    const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), p.label_gap);
    const std::size_t bucket = std::clamp<std::ptrdiff_t>(it - h.edges.begin() - 1, 0,
                                                          static_cast<std::ptrdiff_t>(h.counts.size()) - 1);
    ++h.counts[bucket];
    if (p.label_gap > h.gap_threshold) ++h.confused;
    h.pairs.push_back(p);
  }
  return h;
}

ConfusionHistogram confusion_histogram(const LoadedModel& model, const Manifest& manifest,
                                       ConfusionOptions opts) {
  manifest.validate(true);
  std::vector<std::vector<float>> features;
  std::vector<double> labels, preds;
  NoGradGuard no_grad;
  for (const Sample& s : manifest.samples) {
    if (!s.image.defined()) throw ConfigError("confusion: image for " + s.id + " is not loaded");
    features.push_back(flatten(encode(s.image, model.cfg, model.params)));
    labels.push_back(*s.score);
    preds.push_back(model.scale.to_mos(predict(s.image, model.cfg, model.params)));
  }
  if (!opts.gap_threshold) {
    const auto [lo, hi] = manifest.label_range();
    opts.gap_threshold = 0.3 * (hi - lo);
  }
  return confusion_histogram(features, labels, opts, preds);
}

nlohmann::json to_json(const ConfusionHistogram& h) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : h.pairs) {
    nlohmann::json j = {{"query", p.query},
                        {"neighbor", p.neighbor},
                        {"similarity", p.similarity},
                        {"label_gap", p.label_gap}};
    if (p.pred_error) j["pred_error"] = *p.pred_error;
    pairs.push_back(j);
  }
  return {{"edges", h.edges},
          {"counts", h.counts},
          {"gap_threshold", h.gap_threshold},
          {"confused", h.confused},
          {"pairs", pairs}};
}

ConfusionHistogram confusion_from_json(const nlohmann::json& j) {
  ConfusionHistogram h;
  try {
    h.edges = j.at("edges").get<std::vector<double>>();
    h.counts = j.at("counts").get<std::vector<std::size_t>>();
    h.gap_threshold = j.at("gap_threshold").get<double>();
    h.confused = j.at("confused").get<std::size_t>();
    for (const auto& p : j.value("pairs", nlohmann::json::array())) {
      ConfusionPair cp{p.at("query").get<std::size_t>(), p.at("neighbor").get<std::size_t>(),
                       p.at("similarity").get<double>(), p.at("label_gap").get<double>(),
                       std::nullopt};
      if (p.contains("pred_error")) cp.pred_error = p["pred_error"].get<double>();
      h.pairs.push_back(cp);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("confusion summary: ") + e.what());
  }
  if (h.edges.size() != h.counts.size() + 1) throw FormatError("confusion summary: edge/count mismatch");
  return h;
}

std::string format_confusion(const ConfusionHistogram& h) {
  std::ostringstream os;
  os << "nearest-feature pairs: " << h.pairs.size() << "\n";
  os << "confused pairs (label gap > " << h.gap_threshold << "): " << h.confused << "\n";
  os << "label distance bucket        count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::ostringstream range;
    range << "[" << h.edges[i] << ", " << h.edges[i + 1] << (i + 1 == h.counts.size() ? "]" : ")");
    os << range.str();
    for (std::size_t pad = range.str().size(); pad < 29; ++pad) os << ' ';
    os << h.counts[i] << "\n";
  }
  double err = 0.0;
  std::size_t with_err = 0;
  for (const auto& p : h.pairs) {
    if (p.pred_error) {
      err += *p.pred_error;
      ++with_err;
    }
  }
  if (with_err) os << "mean |prediction - label|: " << err / static_cast<double>(with_err) << "\n";
  return os.str();
}

}  // namespace qfm
