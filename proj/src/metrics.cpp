#include "qfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qfm/error.hpp"

namespace qfm {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.size() < 2) throw DegenerateInputError(std::string(what) + ": need at least 2 samples");
}

}  // namespace

double plcc(std::span<const double> preds, std::span<const double> labels) {
  check_pair(preds, labels, "plcc");
  const double n = static_cast<double>(preds.size());
  const double mp = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
  const double ml = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dx = preds[i] - mp, dy = labels[i] - ml;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DegenerateInputError("correlation undefined: zero variance input");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(std::span<const double> preds, std::span<const double> labels) {
  check_pair(preds, labels, "srcc");
  const auto rp = average_ranks(preds);
  const auto rl = average_ranks(labels);
  return plcc(rp, rl);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / n);
  return s;
}

void MetricReport::finalize() {
  std::vector<double> p, s;
  for (const auto& r : repeats) {
    p.push_back(r.plcc);
    s.push_back(r.srcc);
  }
  plcc = summarize(p);
  srcc = summarize(s);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& x : r.repeats) {
    reps.push_back({{"repeat", x.repeat}, {"n", x.n}, {"plcc", x.plcc}, {"srcc", x.srcc}});
  }
  auto summary = [](const Summary& s) {
    return nlohmann::json{{"mean", s.mean}, {"median", s.median}, {"stddev", s.stddev}};
  };
  return {{"name", r.name},
          {"aggregation", MetricReport::kAggregation},
          {"repeat_count", r.repeats.size()},
          {"repeats", reps},
          {"plcc", summary(r.plcc)},
          {"srcc", summary(r.srcc)}};
}

std::string format_report(const MetricReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "# " << r.name << " (" << MetricReport::kAggregation << ")\n";
  os << "repeat\tn\tPLCC\tSRCC\n";
  for (const auto& x : r.repeats) {
    os << x.repeat << '\t' << x.n << '\t' << x.plcc << '\t' << x.srcc << '\n';
  }
  os << "mean\t-\t" << r.plcc.mean << '\t' << r.srcc.mean << '\n';
  os << "median\t-\t" << r.plcc.median << '\t' << r.srcc.median << '\n';
  os << "stddev\t-\t" << r.plcc.stddev << '\t' << r.srcc.stddev << '\n';
  return os.str();
}

}  // namespace qfm
