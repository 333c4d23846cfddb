#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfm/confusion.hpp"
#include "qfm/metrics.hpp"

namespace qfm {

// "key=v1,v2,..." specs expanded into the cartesian product of override
// lists, first spec varying slowest.
std::vector<std::vector<std::string>> expand_sweep(const std::vector<std::string>& specs);

struct SweepRow {
  std::vector<std::string> overrides;
  MetricReport report;
};

std::string format_sweep_table(const std::vector<SweepRow>& rows);
nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series);
std::string svg_bar_plot(const std::string& title, const std::vector<std::string>& labels,
                         const std::vector<double>& values);

// Per-epoch curves from a run summary (summary.json written by training).
std::vector<Series> epoch_series(const nlohmann::json& summary, const std::string& field);

// Writes the plots that the inputs allow into out_dir and returns their paths.
std::vector<std::filesystem::path> write_plots(const nlohmann::json& summary,
                                               const ConfusionHistogram* confusion,
                                               const std::filesystem::path& out_dir);

}  // namespace qfm
