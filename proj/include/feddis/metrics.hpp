#pragma once

#include "feddis/autograd.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace feddis::metrics {

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape_pct = 0.0;
  bool mape_defined = true;  // false when every truth entry was masked
  std::size_t count = 0;
};

inline constexpr const char* kUndefined = "NA";

/// MAE, RMSE and MAPE (percent) in data units. MAPE only counts entries with
/// |truth| > mask_threshold.
Metrics compute_metrics(const Matrix& prediction, const Matrix& truth, double mask_threshold = 0.1);

/// Weighted mean of per-client metrics. MAPE averages only clients where it is
/// defined, renormalizing their weights.
Metrics weighted_macro(const std::vector<Metrics>& per_client, const std::vector<double>& weights);

std::string format_mape(const Metrics& m);

}  // namespace feddis::metrics
