#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "qfm/error.hpp"
#include "qfm/model.hpp"
#include "qfm/snm.hpp"

using namespace qfm;

namespace {

std::vector<float> random_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (float& x : v) x = rng.uniform(-1, 1);
  return v;
}

TemporaryMemory memory_of(const std::vector<std::vector<float>>& feats, std::vector<float> scores) {
  TemporaryMemory m;
  m.ingest_flat(feats, scores, "T");
  return m;
}

}  // namespace

TEST(Memory, IngestOverwritesRegardlessOfPriorSize) {
  Rng rng(1);
  std::vector<std::vector<float>> big(128, random_vec(rng, 6));
  std::vector<float> big_scores(128, 1.0f);
  TemporaryMemory m;
  m.ingest_flat(big, big_scores, "A");
  std::vector<std::vector<float>> small(4, random_vec(rng, 6));
  const std::vector<float> scores{1, 2, 3, 4};
  m.ingest_flat(small, scores, "A");
  EXPECT_EQ(m.size(), 4u);
  EXPECT_EQ(m[3].score, 4.0f);
  EXPECT_EQ(m[3].origin, "A:3");
}

TEST(Memory, DoubleIngestIsIdempotentAndCountsGenerations) {
  Rng rng(2);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 3; ++i) maps.push_back({Tensor({2, 3}, random_vec(rng, 6))});
  const std::vector<float> scores{0.5f, 1.5f, 2.5f};
  TemporaryMemory m;
  m.ingest(maps, scores, "B");
  const auto g0 = m.generation();
  const auto first = m.entries();
  m.ingest(maps, scores, "B");
  m.ingest(maps, scores, "B");
  EXPECT_EQ(m.generation(), g0 + 2);
  ASSERT_EQ(m.size(), first.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m[i].feature, first[i].feature);
    EXPECT_EQ(m[i].score, first[i].score);
    EXPECT_EQ(m[i].feature, flatten(maps[i]));
  }
}

TEST(Memory, KeepsOnlyLastOfManyBatches) {
  Rng rng(3);
  TemporaryMemory m;
  std::vector<std::vector<float>> last;
  std::vector<float> last_scores;
  for (int b = 0; b < 10; ++b) {
    last.clear();
    last_scores.clear();
    const std::size_t n = 1 + rng.index(8);
    for (std::size_t i = 0; i < n; ++i) {
      last.push_back(random_vec(rng, 5));
      last_scores.push_back(rng.uniform(0, 100));
    }
    m.ingest_flat(last, last_scores, "A");
  }
  ASSERT_EQ(m.size(), last.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m[i].feature, last[i]);
    EXPECT_EQ(m[i].score, last_scores[i]);
  }
}

TEST(Memory, RejectsMismatchedInput) {
  TemporaryMemory m;
  const std::vector<float> one{1};
  EXPECT_THROW(m.ingest_flat({{1, 2}, {3, 4}}, one, "A"), ShapeError);
  const std::vector<float> two{1, 2};
  EXPECT_THROW(m.ingest_flat({{1, 2}, {3}}, two, "A"), ShapeError);
}

TEST(Metric, WorkedExample) {
  const std::vector<float> f{1, 0}, g{0.6f, 0.8f};
  EXPECT_NEAR(cosine_similarity(f, g), 0.6, 1e-7);
  EXPECT_NEAR(matching_metric(f, 0.5f, g, 0.7f), 0.12f, 1e-6f);
}

TEST(Metric, ZeroCases) {
  const std::vector<float> f{1, 2, 3}, orth{3, 0, -1};
  EXPECT_EQ(matching_metric(f, 0.1f, f, 0.1f), 0.0f);
  EXPECT_EQ(matching_metric(f, 0.1f, orth, 0.9f), 0.0f);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_vec(rng, 7), b = random_vec(rng, 7);
    const float y = rng.uniform(-5, 5);
    EXPECT_EQ(matching_metric(a, y, b, y, false), 0.0f);
  }
}

TEST(Metric, ScaleInvariantInFeatures) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto a = random_vec(rng, 16);
    const auto b = random_vec(rng, 16);
    const float y = rng.uniform(0, 1), yh = rng.uniform(0, 1);
    const float base = matching_metric(a, y, b, yh, false);
    const float alpha = rng.uniform(0.01f, 100.0f);
    for (float& v : a) v *= alpha;
    EXPECT_NEAR(matching_metric(a, y, b, yh, false), base, 1e-6f);
  }
}

TEST(Metric, ClampAndModes) {
  const std::vector<float> f{1, 0}, g{-1, 0};
  EXPECT_EQ(matching_metric(f, 0, g, 1, true), 0.0f);
  EXPECT_EQ(matching_metric(f, 0, g, 1, false), -1.0f);
  EXPECT_EQ(matching_metric(f, 0, g, 0.25f, MatchOptions{true, MatchMode::kQualityOnly}), 0.25f);
  EXPECT_EQ(matching_metric(f, 0, f, 0.25f, MatchOptions{true, MatchMode::kFeatureOnly}), 1.0f);
  const std::vector<float> zero{0, 0};
  EXPECT_THROW(matching_metric(f, 0, zero, 1), DegenerateInputError);
}

TEST(TopK, OrderedBySmallestMetric) {
  const std::vector<std::vector<float>> feats{{1, 0}, {1, 0}, {1, 0}};
  const TemporaryMemory m = memory_of(feats, {0.3f, 0.1f, 0.2f});
  const std::vector<float> q{1, 0};
  const MatchResult r = match_topk(q, 0.0f, m, 2);
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{1, 2}));
  EXPECT_NEAR(r.scores[0], 0.1f, 1e-7f);
  EXPECT_NEAR(r.scores[1], 0.2f, 1e-7f);
}

TEST(TopK, ExcludesSelf) {
  Rng rng(6);
  std::vector<std::vector<float>> feats;
  std::vector<float> scores;
  for (int i = 0; i < 6; ++i) {
    feats.push_back(random_vec(rng, 4));
    scores.push_back(rng.uniform(0, 1));
  }
  const TemporaryMemory m = memory_of(feats, scores);
  for (std::size_t i = 0; i < feats.size(); ++i) {
    EXPECT_EQ(match_topk(feats[i], scores[i], m, 1).scores[0], 0.0f);
    const MatchResult r = match_topk(feats[i], scores[i], m, 10, i);
    EXPECT_EQ(r.effective_k(), 5u);
    EXPECT_EQ(std::count(r.indices.begin(), r.indices.end(), i), 0);
  }
}

TEST(TopK, LargeKReturnsEverything) {
  const TemporaryMemory m = memory_of({{1, 0}, {0, 1}, {1, 1}}, {1, 2, 3});
  const std::vector<float> q{1, 0.5f};
  EXPECT_EQ(match_topk(q, 0, m, 50).effective_k(), 3u);
  EXPECT_THROW(match_topk(q, 0, m, 0), ConfigError);
  const TemporaryMemory one = memory_of({{1, 0}}, {1});
  EXPECT_THROW(match_topk(q, 0, one, 1, 0), DegenerateInputError);
}

TEST(TopK, TiesBreakByIndexDeterministically) {
  // Every entry has a negative cosine, so all clamped metrics are zero.
  const TemporaryMemory m = memory_of({{-1, 0}, {-1, 0.1f}, {-1, -0.2f}, {-2, 0}}, {5, 1, 9, 2});
  const std::vector<float> q{1, 0};
  const MatchResult a = match_topk(q, 0, m, 3), b = match_topk(q, 0, m, 3);
  EXPECT_EQ(a.indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.scores, b.scores);
}

TEST(TopK, AgreesWithBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(40), d = 1 + rng.index(64);
    std::vector<std::vector<float>> feats;
    std::vector<float> scores;
    for (std::size_t i = 0; i < n; ++i) {
      feats.push_back(random_vec(rng, d));
      scores.push_back(rng.uniform(0, 1));
    }
    const TemporaryMemory m = memory_of(feats, scores);
    const auto q = random_vec(rng, d);
    const float y = rng.uniform(0, 1);
    const std::size_t k = 1 + rng.index(8);
    const bool clamp = rng.bernoulli(0.5);
    const std::optional<std::size_t> ex =
        rng.bernoulli(0.5) ? std::optional<std::size_t>(rng.index(n)) : std::nullopt;
    const MatchResult r = match_topk(q, y, m, k, ex, MatchOptions{clamp, MatchMode::kFeatureScore});
    const auto o = qfm::testing::brute_topk(q, y, feats, scores, k, ex ? static_cast<long>(*ex) : -1, clamp);
    ASSERT_EQ(r.indices, o.indices) << "trial " << trial;
    for (std::size_t i = 0; i < o.metrics.size(); ++i) EXPECT_NEAR(r.scores[i], o.metrics[i], 1e-6);
  }
}

TEST(Normalize, ConstantFeatureBecomesZero) {
  const std::vector<float> c(10, 3.5f);
  for (float v : layer_normalize(c)) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, ScoresAreZScored) {
  const std::vector<std::vector<float>> feats{{1, 2}, {2, 1}, {0, 3}};
  const std::vector<float> scores{1, 2, 3};
  const NormalizedSet n = normalize_for_matching(feats, scores);
  EXPECT_NEAR(n.scores[0], -1.2247f, 1e-3f);
  EXPECT_NEAR(n.scores[1], 0.0f, 1e-6f);
  EXPECT_NEAR(n.scores[2], 1.2247f, 1e-3f);
  const NormalizedSet raw = normalize_for_matching(feats, scores, false);
  EXPECT_EQ(raw.scores, scores);
}

TEST(Normalize, CosineAfterNormalizationIgnoresPositiveScale) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    auto a = random_vec(rng, 20);
    const auto b = random_vec(rng, 20);
    const double base = cosine_similarity(layer_normalize(a), layer_normalize(b));
    const float alpha = rng.uniform(0.1f, 50.0f);
    for (float& v : a) v *= alpha;
    EXPECT_NEAR(cosine_similarity(layer_normalize(a), layer_normalize(b)), base, 1e-5);
  }
}

TEST(Normalize, MatchingViewMirrorsMemory) {
  const TemporaryMemory m = memory_of({{1, 2, 3}, {3, 2, 1}, {0, 0, 1}}, {10, 20, 60});
  ScoreStandardizer s;
  const TemporaryMemory v = matching_view(m, true, &s);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_FALSE(s.identity);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(v[i].feature, layer_normalize(m[i].feature));
    EXPECT_FLOAT_EQ(v[i].score, s(m[i].score));
  }
  const auto fsm = feature_score_matrix(v);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(fsm[i][i], 0.0f);
}
