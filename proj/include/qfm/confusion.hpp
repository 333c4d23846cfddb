#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace qfm {

struct LoadedModel;
struct Manifest;

struct ConfusionPair {
  std::size_t query = 0;
  std::size_t neighbor = 0;
  double similarity = 0.0;  // cosine
  double label_gap = 0.0;   // |y_query - y_neighbor|
  std::optional<double> pred_error;  // |prediction - label| of the query
};

// Nearest-feature pairs bucketed by label distance. `edges` has one more
// element than `counts`; bucket i covers [edges[i], edges[i+1]) and the last
// bucket is closed. Gaps outside the edge range land in the end buckets.
struct ConfusionHistogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::vector<ConfusionPair> pairs;
  double gap_threshold = 0.0;
  std::size_t confused = 0;  // pairs with label_gap > gap_threshold
};

struct ConfusionOptions {
  std::size_t buckets = 10;          // quantile buckets when `edges` is empty
  std::vector<double> edges;         // explicit edges, strictly increasing
  std::optional<double> gap_threshold;  // default: 0.3 x label range
  bool layer_norm = true;            // normalize features before the cosine
};

// Edges at the quantiles of all pairwise |y_i - y_j|, starting at 0,
// duplicates removed.
std::vector<double> quantile_edges(std::span<const double> labels, std::size_t buckets);

// Each row of `features` is one image. Nearest neighbor by cosine similarity
// (self excluded, ties to the lower index). Throws DegenerateInputError for
// fewer than 2 images.
ConfusionHistogram confusion_histogram(std::span<const std::vector<float>> features,
                                       std::span<const double> labels,
                                       const ConfusionOptions& opts = {},
                                       std::span<const double> predictions = {});

// Runs the model over every labeled image of the manifest and analyses the
// flattened encoder features. The label range comes from the manifest.
ConfusionHistogram confusion_histogram(const LoadedModel& model, const Manifest& manifest,
                                       ConfusionOptions opts = {});

nlohmann::json to_json(const ConfusionHistogram& h);
ConfusionHistogram confusion_from_json(const nlohmann::json& j);
std::string format_confusion(const ConfusionHistogram& h);

}  // namespace qfm
