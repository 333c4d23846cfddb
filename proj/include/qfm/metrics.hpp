#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace qfm {

// Pearson linear correlation. Needs equal lengths >= 2 and nonzero variance on
// both sides (DegenerateInputError otherwise).
double plcc(std::span<const double> preds, std::span<const double> labels);

// Spearman rank correlation: Pearson over average ranks (ties share the mean
// of their positions).
double srcc(std::span<const double> preds, std::span<const double> labels);

// 1-based average ranks.
std::vector<double> average_ranks(std::span<const double> values);

struct RepeatMetrics {
  std::size_t repeat = 0;
  std::size_t n = 0;
  double plcc = 0.0;
  double srcc = 0.0;
};

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // population
};

Summary summarize(std::span<const double> values);

// Per-repeat SRCC/PLCC with their aggregates. The headline value is the mean.
struct MetricReport {
  std::string name;
  std::vector<RepeatMetrics> repeats;
  Summary plcc;
  Summary srcc;
  static constexpr const char* kAggregation = "headline=mean; median and stddev also reported";

  void finalize();
  double headline_srcc() const { return srcc.mean; }
  double headline_plcc() const { return plcc.mean; }
};

nlohmann::json to_json(const MetricReport& r);
std::string format_report(const MetricReport& r);

}  // namespace qfm
