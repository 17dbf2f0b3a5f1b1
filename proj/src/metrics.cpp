#include "feddis/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace feddis::metrics {

Metrics compute_metrics(const Matrix& prediction, const Matrix& truth, double mask_threshold) {
  if (prediction.rows() != truth.rows() || prediction.cols() != truth.cols()) {
    throw std::invalid_argument("metrics: prediction and truth differ in shape");
  }
  Metrics m;
  m.count = static_cast<std::size_t>(truth.size());
  if (m.count == 0) {
    m.mape_defined = false;
    return m;
  }
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t kept = 0;
  for (Index i = 0; i < truth.size(); ++i) {
    const double y = truth.data()[i];
    const double e = prediction.data()[i] - y;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    if (std::abs(y) > mask_threshold) {
      pct_sum += std::abs(e) / std::abs(y);
      ++kept;
    }
  }
  const auto n = static_cast<double>(m.count);
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape_defined = kept > 0;
  m.mape_pct = kept > 0 ? 100.0 * pct_sum / static_cast<double>(kept) : std::nan("");
  return m;
}

Metrics weighted_macro(const std::vector<Metrics>& per_client, const std::vector<double>& weights) {
  if (per_client.size() != weights.size()) throw std::invalid_argument("one weight per client required");
  Metrics out;
  double total = 0.0;
  double mape_total = 0.0;
  double mape_acc = 0.0;
  for (std::size_t i = 0; i < per_client.size(); ++i) {
    const double w = weights[i];
    if (w < 0.0) throw std::invalid_argument("macro weights must be non-negative");
    total += w;
    out.mae += w * per_client[i].mae;
    out.rmse += w * per_client[i].rmse;
    out.count += per_client[i].count;
    if (per_client[i].mape_defined) {
      mape_total += w;
      mape_acc += w * per_client[i].mape_pct;
    }
  }
  if (total <= 0.0) throw std::invalid_argument("macro weights sum to zero");
  out.mae /= total;
  out.rmse /= total;
  out.mape_defined = mape_total > 0.0;
  out.mape_pct = out.mape_defined ? mape_acc / mape_total : std::nan("");
  return out;
}

std::string format_mape(const Metrics& m) {
  if (!m.mape_defined) return kUndefined;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", m.mape_pct);
  return buf;
}

}  // namespace feddis::metrics
