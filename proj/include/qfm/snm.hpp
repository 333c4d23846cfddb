#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfm/model.hpp"

namespace qfm {

struct MemoryEntry {
  std::vector<float> feature;  // flattened, detached copy
  float score = 0.0f;
  std::string origin;  // e.g. "A:3" = dataset tag and batch index
};

// Per-iteration store of (feature, score) pairs. Every ingest replaces the
// whole contents; nothing survives from the previous batch.
class TemporaryMemory {
 public:
  // Throws ShapeError when the lists differ in length or a feature map has the
  // wrong shape for this memory's feature length (fixed by the first ingest).
  void ingest(std::span<const FeatureMap> features, std::span<const float> scores,
              std::string_view tag);
  void ingest_flat(std::vector<std::vector<float>> features, std::span<const float> scores,
                   std::string_view tag);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  const MemoryEntry& operator[](std::size_t i) const { return entries_[i]; }
  std::uint64_t generation() const { return generation_; }

 private:
  std::vector<MemoryEntry> entries_;
  std::uint64_t generation_ = 0;
};

enum class MatchMode {
  kFeatureScore,  // cosine x score distance
  kQualityOnly,   // score distance alone
  kFeatureOnly,   // cosine alone
};

struct MatchOptions {
  bool clamp_cos = true;
  MatchMode mode = MatchMode::kFeatureScore;
};

struct MatchResult {
  std::vector<std::size_t> indices;
  std::vector<float> scores;
  std::size_t effective_k() const { return indices.size(); }
};

double cosine_similarity(std::span<const float> a, std::span<const float> b);

// cos(f, f_hat) * |y - y_hat|. With clamp_cos the cosine is clamped to [0, 1]
// first. Throws DegenerateInputError for a zero-norm vector.
float matching_metric(std::span<const float> f, float y, std::span<const float> f_hat,
                      float y_hat, bool clamp_cos = true);

float matching_metric(std::span<const float> f, float y, std::span<const float> f_hat,
                      float y_hat, const MatchOptions& opts);

// The K entries with the smallest metric, ordered by (metric, index). Fewer
// than K are returned when the memory (after exclusion) is smaller.
MatchResult match_topk(std::span<const float> query_f, float query_y,
                       const TemporaryMemory& memory, std::size_t k,
                       std::optional<std::size_t> exclude_index = std::nullopt,
                       const MatchOptions& opts = {});

// Standardization applied to scores before matching. Identity for a single
// score population or when disabled.
struct ScoreStandardizer {
  double mean = 0.0;
  double inv_std = 1.0;
  bool identity = true;
  float operator()(float y) const {
    return identity ? y : static_cast<float>((y - mean) * inv_std);
  }
};

ScoreStandardizer fit_standardizer(std::span<const float> scores, float eps = 1e-5f);

// Per-vector zero mean / unit variance, eps-guarded.
std::vector<float> layer_normalize(std::span<const float> v, float eps = 1e-5f);

struct NormalizedSet {
  std::vector<std::vector<float>> features;
  std::vector<float> scores;
  ScoreStandardizer standardizer;
};

NormalizedSet normalize_for_matching(std::span<const std::vector<float>> features,
                                     std::span<const float> scores, bool zscore_scores = true);

// Memory whose entries are the normalized counterparts of `memory`, index for
// index. This is what queries are matched against.
TemporaryMemory matching_view(const TemporaryMemory& memory, bool zscore_scores,
                              ScoreStandardizer* standardizer_out = nullptr);

// Full n x n Feature-Score Matrix of a memory against itself.
std::vector<std::vector<float>> feature_score_matrix(const TemporaryMemory& view,
                                                     const MatchOptions& opts = {});

}  // namespace qfm
