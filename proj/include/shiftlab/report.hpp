#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftlab/config.hpp"
#include "shiftlab/errors.hpp"
#include "shiftlab/linalg.hpp"
#include "shiftlab/metrics.hpp"

namespace shiftlab {

inline constexpr int kReportFormatVersion = 1;

// Rejection results as they appear in a report. The 0.065 threshold acts on
// absolute per-class probability spread, whose scale depends on the number of
// classes, so the class count and aggregation rule are recorded next to it.
// An empty retained set is reported as such instead of fabricating accuracy.
struct RejectionSection {
  double threshold = 0.0;
  ScoreAggregation aggregation = ScoreAggregation::Mean;
  std::size_t num_classes = 0;
  bool empty_retention = false;
  std::size_t retained = 0;
  double accuracy_before = 0.0;
  std::optional<double> accuracy_after;
  std::optional<double> delta;
};

struct ExperimentReport {
  int format_version = kReportFormatVersion;
  std::string strategy;
  std::uint64_t seed = 0;
  nlohmann::json config_echo;
  std::vector<double> per_model_accuracy;
  double ensemble_accuracy = 0.0;
  Matrix disagreement;
  double mean_disagreement = 0.0;
  RejectionSection rejection;
  std::vector<double> rel_l2_trajectory;
  std::size_t budget_model_epochs = 0;
  double wall_clock_seconds = 0.0;
};

inline nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["format_version"] = r.format_version;
  j["strategy"] = r.strategy;
  j["seed"] = r.seed;
  j["config"] = r.config_echo;
  j["per_model_accuracy"] = r.per_model_accuracy;
  j["ensemble_accuracy"] = r.ensemble_accuracy;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.disagreement.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < r.disagreement.cols; ++k)
      row.push_back(r.disagreement(i, k));
    rows.push_back(std::move(row));
  }
  j["disagreement"]["matrix"] = std::move(rows);
  j["disagreement"]["mean"] = r.mean_disagreement;
  nlohmann::json& rej = j["rejection"];
  rej["threshold"] = r.rejection.threshold;
  rej["aggregation"] = to_string(r.rejection.aggregation);
  rej["num_classes"] = r.rejection.num_classes;
  rej["empty_retention"] = r.rejection.empty_retention;
  rej["retained"] = r.rejection.retained;
  rej["accuracy_before"] = r.rejection.accuracy_before;
  rej["accuracy_after"] =
      r.rejection.accuracy_after ? nlohmann::json(*r.rejection.accuracy_after)
                                 : nlohmann::json();
  rej["delta"] = r.rejection.delta ? nlohmann::json(*r.rejection.delta)
                                   : nlohmann::json();
  j["rel_l2"] = r.rel_l2_trajectory;
  j["budget_model_epochs"] = r.budget_model_epochs;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  try {
    r.format_version = j.at("format_version").get<int>();
    if (r.format_version != kReportFormatVersion)
      throw ParseError("report: unsupported format_version " +
                       std::to_string(r.format_version));
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_echo = j.at("config");
    r.per_model_accuracy = j.at("per_model_accuracy").get<std::vector<double>>();
    r.ensemble_accuracy = j.at("ensemble_accuracy").get<double>();
    const nlohmann::json& rows = j.at("disagreement").at("matrix");
    const std::size_t n = rows.size();
    r.disagreement = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != n) throw ParseError("report: ragged disagreement matrix");
      for (std::size_t k = 0; k < n; ++k)
        r.disagreement(i, k) = rows[i][k].get<double>();
    }
    r.mean_disagreement = j.at("disagreement").at("mean").get<double>();
    const nlohmann::json& rej = j.at("rejection");
    r.rejection.threshold = rej.at("threshold").get<double>();
    r.rejection.aggregation = detail::score_aggregation_from_string(
        rej.at("aggregation").get<std::string>());
    r.rejection.num_classes = rej.at("num_classes").get<std::size_t>();
    r.rejection.empty_retention = rej.at("empty_retention").get<bool>();
    r.rejection.retained = rej.at("retained").get<std::size_t>();
    r.rejection.accuracy_before = rej.at("accuracy_before").get<double>();
    if (!rej.at("accuracy_after").is_null())
      r.rejection.accuracy_after = rej.at("accuracy_after").get<double>();
    if (!rej.at("delta").is_null())
      r.rejection.delta = rej.at("delta").get<double>();
    r.rel_l2_trajectory = j.at("rel_l2").get<std::vector<double>>();
    r.budget_model_epochs = j.at("budget_model_epochs").get<std::size_t>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: malformed document: ") + e.what());
  }
  return r;
}

inline void write_report(const ExperimentReport& r, const std::string& path) {
  std::ofstream file(path);
  if (!file) throw IoError("report: cannot write " + path);
  file << report_to_json(r).dump(2) << '\n';
  if (!file) throw IoError("report: write failed for " + path);
}

inline ExperimentReport read_report(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("report: cannot open " + path);
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("report: corrupt file " + path + ": " + e.what());
  }
  return report_from_json(j);
}

namespace detail {

// Shortest round-trip decimal for CSV cells, same encoder the JSON files use.
inline std::string format_double(double x) { return nlohmann::json(x).dump(); }

}  // namespace detail

inline std::string summary_csv(const std::vector<ExperimentReport>& reports) {
  if (reports.empty()) throw InputError("summary: no reports");
  const std::size_t n = reports.front().per_model_accuracy.size();
  for (const ExperimentReport& r : reports)
    if (r.per_model_accuracy.size() != n)
      throw InputError("summary: reports have differing ensemble sizes");

  std::string out = "strategy";
  for (std::size_t i = 0; i < n; ++i)
    out += ",model_" + std::to_string(i) + "_accuracy";
  out += ",ensemble_accuracy,mean_disagreement,accuracy_before_rejection"
         ",accuracy_after_rejection,rejection_delta,budget_model_epochs\n";
  for (const ExperimentReport& r : reports) {
    out += r.strategy;
    for (double a : r.per_model_accuracy) out += "," + detail::format_double(a);
    out += "," + detail::format_double(r.ensemble_accuracy);
    out += "," + detail::format_double(r.mean_disagreement);
    out += "," + detail::format_double(r.rejection.accuracy_before);
    out += ",";
    if (r.rejection.accuracy_after) out += detail::format_double(*r.rejection.accuracy_after);
    out += ",";
    if (r.rejection.delta) out += detail::format_double(*r.rejection.delta);
    out += "," + std::to_string(r.budget_model_epochs) + "\n";
  }
  return out;
}

inline void write_summary(const std::vector<ExperimentReport>& reports,
                          const std::string& path) {
  const std::string csv = summary_csv(reports);
  std::ofstream file(path);
  if (!file) throw IoError("summary: cannot write " + path);
  file << csv;
  if (!file) throw IoError("summary: write failed for " + path);
}

namespace detail {

inline std::string svg_num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

}  // namespace detail

// Per-epoch shift-magnitude curve as a standalone SVG line plot.
inline std::string rel_l2_svg(const std::vector<double>& trajectory) {
  if (trajectory.empty()) throw InputError("plot: empty trajectory");
  const double width = 640.0, height = 400.0;
  const double left = 60.0, right = 20.0, top = 20.0, bottom = 40.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  double y_max = 0.0;
  for (double v : trajectory) y_max = std::max(y_max, v);
  if (y_max <= 0.0) y_max = 1.0;
  const std::size_t n = trajectory.size();

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" + detail::svg_num(top) +
         "\" x2=\"" + detail::svg_num(left) + "\" y2=\"" +
         detail::svg_num(height - bottom) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + detail::svg_num(left) + "\" y1=\"" +
         detail::svg_num(height - bottom) + "\" x2=\"" +
         detail::svg_num(width - right) + "\" y2=\"" +
         detail::svg_num(height - bottom) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + detail::svg_num(width / 2.0) + "\" y=\"" +
         detail::svg_num(height - 8.0) +
         "\" font-size=\"14\" text-anchor=\"middle\">epoch</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::svg_num(height / 2.0) +
         "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         detail::svg_num(height / 2.0) + ")\">relative L2</text>\n";
  svg += "<text x=\"" + detail::svg_num(left - 6.0) + "\" y=\"" +
         detail::svg_num(top + 5.0) + "\" font-size=\"12\" text-anchor=\"end\">" +
         detail::svg_num(y_max) + "</text>\n";
  svg += "<text x=\"" + detail::svg_num(left - 6.0) + "\" y=\"" +
         detail::svg_num(height - bottom + 5.0) +
         "\" font-size=\"12\" text-anchor=\"end\">0</text>\n";
  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < n; ++i) {
    const double fx = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    const double x = left + fx * plot_w;
    const double y = height - bottom - (trajectory[i] / y_max) * plot_h;
    if (i > 0) svg += " ";
    svg += detail::svg_num(x) + "," + detail::svg_num(y);
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

inline void write_rel_l2_svg(const std::vector<double>& trajectory,
                             const std::string& path) {
  const std::string svg = rel_l2_svg(trajectory);
  std::ofstream file(path);
  if (!file) throw IoError("plot: cannot write " + path);
  file << svg;
  if (!file) throw IoError("plot: write failed for " + path);
}

}  // namespace shiftlab
