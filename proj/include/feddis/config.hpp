#pragma once

// Experiment configuration as a flat key = value document. Every field is
// echoed into the report so a run can be reproduced from its own output.

#include "feddis/autograd.hpp"
#include "feddis/disentangle.hpp"
#include "feddis/protocol.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace feddis {

struct ExperimentConfig {
  std::string name = "run";
  /// "synthetic" or a path to a dataset file.
  std::string dataset = "synthetic";
  std::string data_format = "auto";  // auto | matrix-binary | csv
  std::string partition = "contiguous-blocks";  // contiguous-blocks | index-file
  std::string partition_file;

  std::size_t clients = 4;  // M
  Index history = 12;       // T
  Index horizon = 12;       // T'
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  double test_fraction = 0.2;

  Index rounds = 100;
  Index local_epochs = 1;
  double lr = 0.005;
  double critic_lr = 0.005;
  Index batch_size = 64;

  Index hidden = 64;  // C
  Index embed = 10;   // d
  Index layers = 2;
  Index personal_patterns = 64;  // B
  Index global_patterns = 16;    // O
  double alpha = 0.5;
  double lambda = 0.1;
  disentangle::BankInit personal_init = disentangle::BankInit::random_pca_whiten;
  disentangle::BankInit global_init = disentangle::BankInit::xavier;

  protocol::Mode mode = protocol::Mode::feddis;
  Index top_k = 3;  // K
  double tau = 0.3;
  double epsilon = 0.3;
  bool cps_include_self = false;
  double prox_mu = 0.01;
  protocol::AblationFlags ablation;

  double mape_threshold = 0.1;
  std::uint64_t seed = 1;
  bool checkpoints = true;

  // Synthetic benchmark, used when dataset == "synthetic". The client count is `clients`.
  std::size_t synth_nodes_per_client = 10;
  std::size_t synth_steps = 2880;
  std::size_t synth_prototypes = 3;
  double synth_amplitude = 8.0;
  double synth_noise = 1.0;
};

/// Keys in echo order.
std::vector<std::string> config_keys();

/// Sets one field from text; throws std::invalid_argument on unknown keys or bad values.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);

/// Parses "key = value" lines; '#' starts a comment.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
/// Applies "key=value" overrides in order.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides);

std::string echo_config(const ExperimentConfig& config);

/// Throws std::invalid_argument describing the first invalid field.
void validate_config(const ExperimentConfig& config);

}  // namespace feddis
