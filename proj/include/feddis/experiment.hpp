#pragma once

// The federated training loop: builds clients from a config, runs rounds of
// local training and server aggregation, tracks validation metrics, and
// evaluates the test split at the best-validation round.

#include "feddis/config.hpp"
#include "feddis/metrics.hpp"
#include "feddis/protocol.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace feddis {

struct RoundRecord {
  Index round = 0;
  double seconds = 0.0;              // wall clock for the whole round
  double aggregation_seconds = 0.0;  // server side only
  std::vector<protocol::RoundStats> training;  // per client
  std::vector<metrics::Metrics> validation;    // per client
  metrics::Metrics validation_macro;
  std::size_t patterns_replaced = 0;
  Matrix fusion_weights;
};

struct ReportBundle {
  ExperimentConfig config;
  std::string variant;  // ablation or sweep label; empty for a plain run
  std::vector<std::size_t> client_nodes;
  std::vector<double> validation_weights;  // per-client macro weights
  std::vector<double> test_weights;

  std::vector<metrics::Metrics> untrained_validation;
  metrics::Metrics untrained_validation_macro;
  std::vector<RoundRecord> rounds;

  Index best_round = 0;  // 0 means the untrained model
  std::vector<metrics::Metrics> test;
  metrics::Metrics test_macro;

  double total_seconds = 0.0;
  long privacy_checks = 0;
  std::vector<std::filesystem::path> checkpoints;
};

struct RunHooks {
  /// Called after every server round with the decoded uploads and payloads.
  std::function<void(Index round, const std::vector<protocol::ClientUpdate>&,
                     const std::vector<protocol::ServerPayload>&)>
      on_exchange;
  std::function<void(const RoundRecord&)> on_round;
  /// When set and config.checkpoints is true, one archive per round is written here.
  std::filesystem::path checkpoint_dir;
};

struct Federation {
  std::vector<std::unique_ptr<protocol::Client>> clients;
  std::vector<protocol::PrivacyProbe> probes;
};

/// Loads or generates data, partitions it, and instantiates every client.
Federation build_federation(const ExperimentConfig& config);

ReportBundle run_federated_experiment(const ExperimentConfig& config, const RunHooks& hooks = {});

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"full", "no_cd", "no_gp", "no_wu", "no_cps"};
  return v;
}

/// The base config with one ablation switched on ("full" switches none).
ExperimentConfig ablation_config(const ExperimentConfig& base, const std::string& variant);

std::vector<ReportBundle> run_ablation(const ExperimentConfig& base,
                                       const std::function<RunHooks(const std::string&)>& hooks = {});

struct SweepGrid {
  std::vector<Index> global_patterns;    // O
  std::vector<Index> personal_patterns;  // B
  std::vector<Index> top_k;              // K
};

std::vector<ReportBundle> run_sweep(const ExperimentConfig& base, const SweepGrid& grid,
                                    const std::function<RunHooks(const std::string&)>& hooks = {});

}  // namespace feddis
