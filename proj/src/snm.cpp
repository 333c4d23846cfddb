#include "qfm/snm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qfm/error.hpp"

namespace qfm {

void TemporaryMemory::ingest(std::span<const FeatureMap> features, std::span<const float> scores,
                             std::string_view tag) {
  std::vector<std::vector<float>> flat;
  flat.reserve(features.size());
  for (const FeatureMap& f : features) flat.push_back(flatten(f));
  ingest_flat(std::move(flat), scores, tag);
}

void TemporaryMemory::ingest_flat(std::vector<std::vector<float>> features,
                                  std::span<const float> scores, std::string_view tag) {
  if (features.size() != scores.size()) {
    throw ShapeError("memory ingest: " + std::to_string(features.size()) + " features but " +
                     std::to_string(scores.size()) + " scores");
  }
  for (std::size_t i = 1; i < features.size(); ++i) {
    if (features[i].size() != features[0].size()) {
      throw ShapeError("memory ingest: feature lengths differ within the batch");
    }
  }
  for (float s : scores) {
    if (!std::isfinite(s)) throw NumericError("memory ingest: non-finite score");
  }
  std::vector<MemoryEntry> next;
  next.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    next.push_back({std::move(features[i]), scores[i], std::string(tag) + ":" + std::to_string(i)});
  }
  entries_ = std::move(next);
  ++generation_;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine: vector lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine of a zero-norm vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

float matching_metric(std::span<const float> f, float y, std::span<const float> f_hat,
                      float y_hat, bool clamp_cos) {
  return matching_metric(f, y, f_hat, y_hat, MatchOptions{clamp_cos, MatchMode::kFeatureScore});
}

float matching_metric(std::span<const float> f, float y, std::span<const float> f_hat,
                      float y_hat, const MatchOptions& opts) {
  const double dist = std::fabs(static_cast<double>(y) - static_cast<double>(y_hat));
  if (opts.mode == MatchMode::kQualityOnly) return static_cast<float>(dist);
  double cos = cosine_similarity(f, f_hat);
  if (opts.clamp_cos) cos = std::clamp(cos, 0.0, 1.0);
  if (opts.mode == MatchMode::kFeatureOnly) return static_cast<float>(cos);
  return static_cast<float>(cos * dist);
}

MatchResult match_topk(std::span<const float> query_f, float query_y,
                       const TemporaryMemory& memory, std::size_t k,
                       std::optional<std::size_t> exclude_index, const MatchOptions& opts) {
  if (k == 0) throw ConfigError("match_topk: K must be at least 1");
  std::vector<std::pair<float, std::size_t>> scored;
  scored.reserve(memory.size());
  for (std::size_t i = 0; i < memory.size(); ++i) {
    if (exclude_index && *exclude_index == i) continue;
    const MemoryEntry& e = memory[i];
    scored.emplace_back(matching_metric(query_f, query_y, e.feature, e.score, opts), i);
  }
  if (scored.empty()) throw DegenerateInputError("match_topk: memory is empty after exclusion");
  const std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end());
  MatchResult out;
  out.indices.reserve(take);
  out.scores.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.scores.push_back(scored[i].first);
    out.indices.push_back(scored[i].second);
  }
  return out;
}

ScoreStandardizer fit_standardizer(std::span<const float> scores, float eps) {
  ScoreStandardizer s;
  if (scores.size() < 2) return s;
  double mean = 0.0;
  for (float y : scores) mean += y;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (float y : scores) var += (y - mean) * (y - mean);
  var /= static_cast<double>(scores.size());
  s.mean = mean;
  s.inv_std = 1.0 / std::sqrt(var + eps);
  s.identity = false;
  return s;
}

std::vector<float> layer_normalize(std::span<const float> v, float eps) {
  if (v.empty()) return {};
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - mean) * inv);
  return out;
}

NormalizedSet normalize_for_matching(std::span<const std::vector<float>> features,
                                     std::span<const float> scores, bool zscore_scores) {
  if (features.size() != scores.size()) {
    throw ShapeError("normalize_for_matching: features and scores differ in length");
  }
  NormalizedSet out;
  out.features.reserve(features.size());
  for (const auto& f : features) out.features.push_back(layer_normalize(f));
  if (zscore_scores) out.standardizer = fit_standardizer(scores);
  out.scores.reserve(scores.size());
  for (float y : scores) out.scores.push_back(out.standardizer(y));
  return out;
}

TemporaryMemory matching_view(const TemporaryMemory& memory, bool zscore_scores,
                              ScoreStandardizer* standardizer_out) {
  std::vector<std::vector<float>> feats;
  std::vector<float> scores;
  feats.reserve(memory.size());
  scores.reserve(memory.size());
  for (const auto& e : memory.entries()) {
    feats.push_back(e.feature);
    scores.push_back(e.score);
  }
  NormalizedSet norm = normalize_for_matching(feats, scores, zscore_scores);
  if (standardizer_out) *standardizer_out = norm.standardizer;
  TemporaryMemory view;
  view.ingest_flat(std::move(norm.features), norm.scores, "view");
  return view;
}

std::vector<std::vector<float>> feature_score_matrix(const TemporaryMemory& view,
                                                     const MatchOptions& opts) {
  const std::size_t n = view.size();
  std::vector<std::vector<float>> m(n, std::vector<float>(n, 0.0f));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m[i][j] = matching_metric(view[i].feature, view[i].score, view[j].feature, view[j].score,
                                opts);
  return m;
}

}  // namespace qfm
