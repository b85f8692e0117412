#pragma once

// CSV and JSON serialization of recall curves and prediction-error tables.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "optirouter/eval.hpp"

namespace optirouter {

inline constexpr const char* kReportCsvHeader = "router,l,points_probed_mean,recall_mean,recall_std,pred_err_mean";

namespace detail {

inline std::string fmt_double(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double rank = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline const PredictionErrorTable* find_table(const std::vector<PredictionErrorTable>& tables, const std::string& router) {
  for (const auto& t : tables)
    if (t.router == router) return &t;
  return nullptr;
}

}  // namespace detail

/// CSV text, one row per (router, l) in the order the curves are given.
inline std::string report_csv(const std::vector<RecallCurve>& curves, const std::vector<PredictionErrorTable>& tables) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  for (const auto& cv : curves) {
    const auto* table = detail::find_table(tables, cv.router);
    for (std::size_t li = 0; li < cv.ls.size(); ++li) {
      std::string err;
      if (table) {
        auto it = std::find(table->ls.begin(), table->ls.end(), cv.ls[li]);
        if (it != table->ls.end()) err = detail::fmt_double(table->error_mean[static_cast<std::size_t>(it - table->ls.begin())]);
      }
      out += cv.router + "," + std::to_string(cv.ls[li]) + "," + detail::fmt_double(cv.points_probed_mean[li], 3) + "," +
             detail::fmt_double(cv.recall_mean[li]) + "," + detail::fmt_double(cv.recall_std[li]) + "," + err + "\n";
    }
  }
  return out;
}

/// CSV for prediction-error tables alone: one row per (router, l) of the error grid.
inline std::string prediction_error_csv(const std::vector<PredictionErrorTable>& tables) {
  std::string out = "router,l,pred_err_mean,skipped_mean\n";
  for (const auto& t : tables)
    for (std::size_t li = 0; li < t.ls.size(); ++li)
      out += t.router + "," + std::to_string(t.ls[li]) + "," + detail::fmt_double(t.error_mean[li]) + "," +
             detail::fmt_double(t.skipped_mean[li], 3) + "\n";
  return out;
}

inline std::string config_hash(const nlohmann::json& config) {
  const std::string dumped = config.dump();
  return hex64(fnv1a64(dumped.data(), dumped.size()));
}

inline nlohmann::json report_json(const std::vector<RecallCurve>& curves, const std::vector<PredictionErrorTable>& tables,
                                  const nlohmann::json& config) {
  nlohmann::json j;
  j["config"] = config;
  j["config_hash"] = config_hash(config);
#if defined(__clang__)
  j["environment"]["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  j["environment"]["compiler"] = std::string("gcc ") + __VERSION__;
#endif
  j["environment"]["cxx_standard"] = static_cast<long>(__cplusplus);
  j["routers"] = nlohmann::json::array();
  for (const auto& cv : curves) {
    nlohmann::json r;
    r["name"] = cv.router;
    r["k"] = cv.k;
    r["l"] = cv.ls;
    r["points_probed_mean"] = cv.points_probed_mean;
    r["recall_mean"] = cv.recall_mean;
    r["recall_std"] = cv.recall_std;
    std::vector<double> p10, p50, p90;
    for (std::size_t li = 0; li < cv.ls.size(); ++li) {
      std::vector<double> col(cv.per_query_recall.size());
      for (std::size_t qi = 0; qi < col.size(); ++qi) col[qi] = cv.per_query_recall[qi][li];
      p10.push_back(detail::percentile(col, 10));
      p50.push_back(detail::percentile(col, 50));
      p90.push_back(detail::percentile(col, 90));
    }
    r["recall_p10"] = p10;
    r["recall_p50"] = p50;
    r["recall_p90"] = p90;
    if (const auto* t = detail::find_table(tables, cv.router)) {
      r["pred_err"]["l"] = t->ls;
      r["pred_err"]["mean"] = t->error_mean;
      r["pred_err"]["skipped_mean"] = t->skipped_mean;
    }
    j["routers"].push_back(std::move(r));
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

/// Writes `<stem>.csv` and `<stem>.json`.
inline void emit_report(const std::vector<RecallCurve>& curves, const std::vector<PredictionErrorTable>& tables,
                        const std::string& stem, const nlohmann::json& config = nlohmann::json::object()) {
  if (curves.empty()) throw InvalidArgument("emit_report: no results");
  for (const auto& cv : curves)
    if (cv.per_query_recall.empty()) throw InvalidArgument("emit_report: empty query set");
  write_text_file(stem + ".csv", report_csv(curves, tables));
  write_text_file(stem + ".json", report_json(curves, tables, config).dump(2) + "\n");
}

}  // namespace optirouter
