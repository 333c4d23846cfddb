#include "qfm/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "qfm/error.hpp"

namespace qfm {

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << escape_xml(title) << "</text>\n";
}

}  // namespace

std::vector<std::vector<std::string>> expand_sweep(const std::vector<std::string>& specs) {
  std::vector<std::vector<std::string>> combos{{}};
  for (const std::string& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw ConfigError("sweep spec must look like key=v1,v2,...: '" + spec + "'");
    }
    const std::string key = spec.substr(0, eq);
    const auto values = split_on(spec.substr(eq + 1), ',');
    std::vector<std::vector<std::string>> next;
    for (const auto& base : combos) {
      for (const auto& v : values) {
        if (v.empty()) throw ConfigError("sweep spec has an empty value: '" + spec + "'");
        auto row = base;
        row.push_back(key + "=" + v);
        next.push_back(std::move(row));
      }
    }
    combos = std::move(next);
  }
  return combos;
}

std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "# aggregation: " << MetricReport::kAggregation << "\n";
  os << std::left << std::setw(36) << "setting" << std::right << std::setw(10) << "SRCC"
     << std::setw(10) << "PLCC" << std::setw(12) << "SRCC med" << std::setw(10) << "SRCC sd"
     << std::setw(9) << "repeats" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const SweepRow& r : rows) {
    std::string setting;
    for (const auto& o : r.overrides) setting += (setting.empty() ? "" : " ") + o;
    if (setting.empty()) setting = "(defaults)";
    os << std::left << std::setw(36) << setting << std::right << std::setw(10)
       << r.report.headline_srcc() << std::setw(10) << r.report.headline_plcc() << std::setw(12)
       << r.report.srcc.median << std::setw(10) << r.report.srcc.stddev << std::setw(9)
       << r.report.repeats.size() << "\n";
  }
  return os.str();
}

nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const SweepRow& r : rows) arr.push_back({{"overrides", r.overrides}, {"report", to_json(r.report)}});
  return {{"aggregation", MetricReport::kAggregation}, {"rows", arr}};
}

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<Series>& series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  open_svg(os, title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = y0 + (y1 - y0) * t / 4.0, x = x0 + (x1 - x0) * t / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
    os << "<text x=\"" << px(x) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
       << num(x) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 16 << "\" text-anchor=\"middle\">"
     << escape_xml(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << kTop + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : series[i].points) os << px(x) << "," << py(y) << " ";
    os << "\"/>\n";
    for (const auto& [x, y] : series[i].points) {
      os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kW - kRight + 32
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kW - kRight + 38 << "\" y=\"" << ly << "\">" << escape_xml(series[i].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_bar_plot(const std::string& title, const std::vector<std::string>& labels,
                         const std::vector<double>& values) {
  if (labels.size() != values.size()) throw ShapeError("bar plot: labels and values differ in length");
  const double vmax = values.empty() ? 1.0 : std::max(1e-12, *std::max_element(values.begin(), values.end()));
  const double pw = kW - kLeft - 30, ph = kH - kTop - kBottom - 30;
  const double slot = values.empty() ? pw : pw / static_cast<double>(values.size());
  std::ostringstream os;
  open_svg(os, title);
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
     << kTop + ph << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = values[i] / vmax * ph;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.1;
    os << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.8
       << "\" height=\"" << h << "\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << x + slot * 0.4 << "\" y=\"" << kTop + ph - h - 4
       << "\" text-anchor=\"middle\">" << num(values[i]) << "</text>\n";
    os << "<text transform=\"translate(" << x + slot * 0.4 << "," << kTop + ph + 12
       << ") rotate(40)\" font-size=\"10\">" << escape_xml(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<Series> epoch_series(const nlohmann::json& summary, const std::string& field) {
  std::vector<Series> out;
  for (const auto& rep : summary.value("repeats", nlohmann::json::array())) {
    Series s{"repeat " + std::to_string(rep.value("repeat", 0)), {}};
    for (const auto& e : rep.value("epochs", nlohmann::json::array())) {
      if (e.contains(field)) s.points.emplace_back(e.at("epoch").get<double>() + 1, e.at(field).get<double>());
    }
    if (!s.points.empty()) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::filesystem::path> write_plots(const nlohmann::json& summary,
                                               const ConfusionHistogram* confusion,
                                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto emit = [&](const std::string& name, const std::string& svg) {
    const auto path = out_dir / name;
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << svg;
    written.push_back(path);
  };
  const std::pair<const char*, const char*> curves[] = {
      {"test_srcc", "test SRCC"}, {"test_plcc", "test PLCC"}, {"train_loss", "train loss"}};
  for (const auto& [field, label] : curves) {
    const auto series = epoch_series(summary, field);
    if (!series.empty()) emit(std::string(field) + ".svg", svg_line_plot(std::string(label) + " per epoch", "epoch", label, series));
  }
  if (confusion != nullptr) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (std::size_t i = 0; i < confusion->counts.size(); ++i) {
      labels.push_back(num(confusion->edges[i]) + "-" + num(confusion->edges[i + 1]));
      values.push_back(static_cast<double>(confusion->counts[i]));
    }
    emit("confusion.svg", svg_bar_plot("nearest-feature pairs by label distance (" +
                                           std::to_string(confusion->confused) + " confused)",
                                       labels, values));
  }
  return written;
}

}  // namespace qfm
