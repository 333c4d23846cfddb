#pragma once

// Deliberately naive reference implementations, written without the library
// so the tests compare two independent computations.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace qfm::testing {

inline long double naive_cosine(const std::vector<float>& a, const std::vector<float>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

struct OracleMatch {
  std::vector<std::size_t> indices;
  std::vector<double> metrics;
};

// Evaluates every entry, then sorts by (metric at float precision, index).
inline OracleMatch brute_topk(const std::vector<float>& f, float y,
                              const std::vector<std::vector<float>>& feats,
                              const std::vector<float>& scores, std::size_t k, long exclude,
                              bool clamp) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (static_cast<long>(i) == exclude) continue;
    long double c = naive_cosine(f, feats[i]);
    if (clamp) c = std::min<long double>(1, std::max<long double>(0, c));
    const long double s = c * std::fabs(static_cast<long double>(y) - scores[i]);
    all.emplace_back(static_cast<double>(s), i);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    const float fa = static_cast<float>(a.first), fb = static_cast<float>(b.first);
    return fa != fb ? fa < fb : a.second < b.second;
  });
  OracleMatch out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    out.indices.push_back(all[i].second);
    out.metrics.push_back(all[i].first);
  }
  return out;
}

// Textbook sample Pearson: sum of co-deviations over the root of the product
// of squared deviations, accumulated in long double.
inline double textbook_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// Rank of v[i] = (#smaller) + (#equal + 1) / 2, counted pairwise.
inline std::vector<double> brute_average_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) less += 1;
      if (w == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

inline double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return textbook_pearson(brute_average_ranks(x), brute_average_ranks(y));
}

// All-pairs nearest neighbor (cosine, self excluded, lowest index on ties)
// and the count of pairs whose label gap exceeds the threshold.
inline std::size_t brute_confused(const std::vector<std::vector<float>>& feats,
                                  const std::vector<double>& labels, double threshold) {
  std::size_t confused = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    long double best = -2;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < feats.size(); ++j) {
      if (j == i) continue;
      const long double c = naive_cosine(feats[i], feats[j]);
      if (c > best) {
        best = c;
        arg = j;
      }
    }
    if (std::fabs(labels[i] - labels[arg]) > threshold) ++confused;
  }
  return confused;
}

}  // namespace qfm::testing
