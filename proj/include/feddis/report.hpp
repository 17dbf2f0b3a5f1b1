#pragma once

// Report files for one run or a family of runs (ablation, sweep).
//
//   config.txt           echoed config, loadable with load_config
//   metrics.csv          round,split,client_id,mae,rmse,mape_pct,seconds (macro validation rows)
//   metrics_clients.csv  same columns, one row per client per round
//   final_metrics.csv    untrained validation and best-round test rows
//   round_log.jsonl      one JSON record per round
//   summary.md / .json   headline numbers
//   mae.svg, rmse.svg    validation curves

#include "feddis/experiment.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace feddis::report {

std::string metrics_csv(const ReportBundle& bundle);
std::string client_metrics_csv(const ReportBundle& bundle);
std::string final_metrics_csv(const ReportBundle& bundle);
nlohmann::json round_json(const RoundRecord& record);
nlohmann::json summary_json(const ReportBundle& bundle);
std::string summary_markdown(const ReportBundle& bundle);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
/// Standalone SVG line chart.
std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series);

/// Writes every file of one bundle into dir (created if missing).
void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir);

/// One subdirectory per bundle named by its variant, plus a comparison
/// summary and combined plots at the top level.
void emit_family(const std::vector<ReportBundle>& bundles, const std::filesystem::path& dir, const std::string& title);

/// Output root: $FEDDIS_OUT when set, else "runs".
std::filesystem::path output_root();

}  // namespace feddis::report
