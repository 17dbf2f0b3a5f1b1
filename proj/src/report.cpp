#include "feddis/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace feddis::report {

namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return metrics::kUndefined;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string row(Index round, const std::string& split, const std::string& client, const metrics::Metrics& m,
                double seconds) {
  return std::to_string(round) + "," + split + "," + client + "," + num(m.mae) + "," + num(m.rmse) + "," +
         metrics::format_mape(m) + "," + num(seconds) + "\n";
}

constexpr const char* kHeader = "round,split,client_id,mae,rmse,mape_pct,seconds\n";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

nlohmann::json metrics_json(const metrics::Metrics& m) {
  return {{"mae", m.mae},
          {"rmse", m.rmse},
          {"mape_pct", m.mape_defined ? nlohmann::json(m.mape_pct) : nlohmann::json(metrics::kUndefined)}};
}

std::string label(const ReportBundle& b) { return b.variant.empty() ? b.config.name : b.variant; }

std::vector<Series> curves(const std::vector<ReportBundle>& bundles, bool rmse) {
  std::vector<Series> out;
  for (const auto& b : bundles) {
    Series s{label(b), {0.0}, {rmse ? b.untrained_validation_macro.rmse : b.untrained_validation_macro.mae}};
    for (const auto& r : b.rounds) {
      s.x.push_back(static_cast<double>(r.round));
      s.y.push_back(rmse ? r.validation_macro.rmse : r.validation_macro.mae);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::string metrics_csv(const ReportBundle& bundle) {
  std::string out = kHeader;
  for (const auto& r : bundle.rounds) out += row(r.round, "validation", "macro", r.validation_macro, r.seconds);
  return out;
}

std::string client_metrics_csv(const ReportBundle& bundle) {
  std::string out = kHeader;
  for (const auto& r : bundle.rounds) {
    for (std::size_t i = 0; i < r.validation.size(); ++i) {
      out += row(r.round, "validation", std::to_string(i), r.validation[i], r.seconds);
    }
  }
  return out;
}

std::string final_metrics_csv(const ReportBundle& bundle) {
  std::string out = kHeader;
  out += row(0, "validation", "macro", bundle.untrained_validation_macro, 0.0);
  for (std::size_t i = 0; i < bundle.untrained_validation.size(); ++i) {
    out += row(0, "validation", std::to_string(i), bundle.untrained_validation[i], 0.0);
  }
  out += row(bundle.best_round, "test", "macro", bundle.test_macro, bundle.total_seconds);
  for (std::size_t i = 0; i < bundle.test.size(); ++i) {
    out += row(bundle.best_round, "test", std::to_string(i), bundle.test[i], bundle.total_seconds);
  }
  return out;
}

nlohmann::json round_json(const RoundRecord& r) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t i = 0; i < r.training.size(); ++i) {
    nlohmann::json c = {{"client_id", i},
                        {"train_loss", r.training[i].loss},
                        {"train_mae_normalized", r.training[i].mae},
                        {"club_mi", r.training[i].mi},
                        {"batches", r.training[i].batches}};
    if (i < r.validation.size()) c["validation"] = metrics_json(r.validation[i]);
    clients.push_back(std::move(c));
  }
  std::vector<std::vector<double>> weights;
  for (Index i = 0; i < r.fusion_weights.rows(); ++i) {
    weights.emplace_back(r.fusion_weights.row(i).data(), r.fusion_weights.row(i).data() + r.fusion_weights.cols());
  }
  return {{"round", r.round},
          {"seconds", r.seconds},
          {"aggregation_seconds", r.aggregation_seconds},
          {"patterns_replaced", r.patterns_replaced},
          {"fusion_weights", weights},
          {"validation_macro", metrics_json(r.validation_macro)},
          {"clients", clients}};
}

nlohmann::json summary_json(const ReportBundle& b) {
  nlohmann::json test_clients = nlohmann::json::array();
  for (const auto& m : b.test) test_clients.push_back(metrics_json(m));
  double round_seconds = 0.0;
  for (const auto& r : b.rounds) round_seconds += r.seconds;
  return {{"name", b.config.name},
          {"variant", b.variant},
          {"mode", protocol::mode_name(b.config.mode)},
          {"seed", b.config.seed},
          {"rounds", b.rounds.size()},
          {"client_nodes", b.client_nodes},
          {"untrained_validation", metrics_json(b.untrained_validation_macro)},
          {"best_round", b.best_round},
          {"test", metrics_json(b.test_macro)},
          {"test_clients", test_clients},
          {"round_seconds_total", round_seconds},
          {"total_seconds", b.total_seconds},
          {"privacy_checks", b.privacy_checks}};
}

std::string summary_markdown(const ReportBundle& b) {
  std::ostringstream out;
  out << "# " << (b.variant.empty() ? b.config.name : b.config.name + " / " + b.variant) << "\n\n";
  out << "mode " << protocol::mode_name(b.config.mode) << ", seed " << b.config.seed << ", " << b.client_nodes.size()
      << " clients, " << b.rounds.size() << " rounds\n\n";
  out << "| evaluation | round | MAE | RMSE | MAPE % |\n|---|---|---|---|---|\n";
  const auto& u = b.untrained_validation_macro;
  out << "| validation, untrained | 0 | " << num(u.mae) << " | " << num(u.rmse) << " | " << metrics::format_mape(u)
      << " |\n";
  if (!b.rounds.empty()) {
    const auto& last = b.rounds.back();
    out << "| validation, last round | " << last.round << " | " << num(last.validation_macro.mae) << " | "
        << num(last.validation_macro.rmse) << " | " << metrics::format_mape(last.validation_macro) << " |\n";
  }
  out << "| test at best validation | " << b.best_round << " | " << num(b.test_macro.mae) << " | "
      << num(b.test_macro.rmse) << " | " << metrics::format_mape(b.test_macro) << " |\n\n";
  out << "Per-client test MAE:";
  for (std::size_t i = 0; i < b.test.size(); ++i) out << (i ? ", " : " ") << num(b.test[i].mae);
  out << "\n\nWall clock " << num(b.total_seconds) << " s; " << b.privacy_checks << " upload privacy checks passed.\n";
  return out.str();
}

std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); };
  auto py = [&](double y) { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    const double xv = x0 + (x1 - x0) * t / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(std::round(yv * 1000) / 1000)
        << "</text>\n";
    out << "<text x=\"" << px(xv) << "\" y=\"" << kH - kBottom + 18 << "\" text-anchor=\"middle\">"
        << num(std::round(xv * 10) / 10) << "</text>\n";
  }
  out << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">round</text>\n";
  out << "<text x=\"16\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kH / 2 << ")\">"
      << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size() && i < series[k].y.size(); ++i) {
      if (std::isfinite(series[k].y[i])) out << px(series[k].x[i]) << "," << py(series[k].y[i]) << " ";
    }
    out << "\"/>\n";
    const double ly = kTop + 18.0 * static_cast<double>(k);
    out << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << kW - kRight + 35 << "\" y=\"" << ly + 4 << "\">" << series[k].label << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "config.txt", echo_config(bundle.config));
  write_text(dir / "metrics.csv", metrics_csv(bundle));
  write_text(dir / "metrics_clients.csv", client_metrics_csv(bundle));
  write_text(dir / "final_metrics.csv", final_metrics_csv(bundle));
  std::string log;
  for (const auto& r : bundle.rounds) log += round_json(r).dump() + "\n";
  write_text(dir / "round_log.jsonl", log);
  write_text(dir / "summary.json", summary_json(bundle).dump(2) + "\n");
  write_text(dir / "summary.md", summary_markdown(bundle));
  const std::vector<ReportBundle> one{bundle};
  write_text(dir / "mae.svg", line_plot_svg("Validation MAE", "MAE", curves(one, false)));
  write_text(dir / "rmse.svg", line_plot_svg("Validation RMSE", "RMSE", curves(one, true)));
}

void emit_family(const std::vector<ReportBundle>& bundles, const std::filesystem::path& dir, const std::string& title) {
  for (const auto& b : bundles) emit_report(b, dir / label(b));
  std::ostringstream md;
  md << "# " << title << "\n\n| variant | best round | test MAE | test RMSE | test MAPE % |\n|---|---|---|---|---|\n";
  nlohmann::json all = nlohmann::json::array();
  for (const auto& b : bundles) {
    md << "| " << label(b) << " | " << b.best_round << " | " << num(b.test_macro.mae) << " | " << num(b.test_macro.rmse)
       << " | " << metrics::format_mape(b.test_macro) << " |\n";
    all.push_back(summary_json(b));
  }
  write_text(dir / "summary.md", md.str());
  write_text(dir / "summary.json", all.dump(2) + "\n");
  write_text(dir / "mae.svg", line_plot_svg(title + ": validation MAE", "MAE", curves(bundles, false)));
  write_text(dir / "rmse.svg", line_plot_svg(title + ": validation RMSE", "RMSE", curves(bundles, true)));
}

std::filesystem::path output_root() {
  const char* env = std::getenv("FEDDIS_OUT");
  return env != nullptr && *env != '\0' ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace feddis::report
