#include "feddis/experiment.hpp"

#include "feddis/archive.hpp"
#include "feddis/log.hpp"
#include "feddis/runtime.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace feddis {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr std::uint64_t kSharedStream = 100;
constexpr std::uint64_t kClientStreamBase = 1000;

std::vector<metrics::Metrics> evaluate_all(Federation& fed, bool test, double mask) {
  std::vector<metrics::Metrics> out;
  for (auto& c : fed.clients) {
    const auto& stream = test ? c->streams().test : c->streams().validation;
    const auto e = c->evaluate(stream);
    out.push_back(metrics::compute_metrics(e.prediction, e.truth, mask));
  }
  return out;
}

void write_checkpoint(const Federation& fed, const ExperimentConfig& config, Index round,
                      const std::filesystem::path& path) {
  archive::Archive a;
  a.meta = {{"round", round}, {"name", config.name}, {"seed", config.seed}, {"clients", fed.clients.size()}};
  for (const auto& c : fed.clients) {
    const std::string prefix = "client" + std::to_string(c->id()) + "/";
    for (const auto& [name, entry] : c->model().params().entries()) {
      a.tensors.push_back({prefix + name, entry.role, entry.param.value});
    }
  }
  archive::write_file(a, path);
}

}  // namespace

Federation build_federation(const ExperimentConfig& config) {
  validate_config(config);
  configure_allocator();
  std::vector<data::ClientPartition> partitions;
  if (config.dataset == "synthetic") {
    data::SyntheticConfig s;
    s.clients = config.clients;
    s.nodes_per_client = config.synth_nodes_per_client;
    s.steps = config.synth_steps;
    s.prototypes = config.synth_prototypes;
    s.client_amplitude = config.synth_amplitude;
    s.noise_std = config.synth_noise;
    const auto ds = data::generate_synthetic(s, config.seed);
    partitions = data::partition_from_assignment(ds.series, ds.partition);
  } else {
    const auto format = config.data_format == "auto" ? data::format_from_path(config.dataset)
                                                     : data::parse_series_format(config.data_format);
    const auto series = data::load_dataset(config.dataset, format);
    const auto strategy = config.partition == "index-file" ? data::PartitionStrategy::index_file
                                                           : data::PartitionStrategy::contiguous_blocks;
    partitions = data::partition_nodes(series, config.clients, strategy, config.partition_file);
  }

  const bool decouple = !config.ablation.no_cd;
  protocol::TrainOptions train;
  train.adam.learning_rate = config.lr;
  train.critic_adam.learning_rate = config.critic_lr;
  train.lambda = decouple ? config.lambda : 0.0;
  train.batch_size = config.batch_size;
  train.local_epochs = config.local_epochs;
  train.mode = config.mode;
  train.prox_mu = config.prox_mu;

  Federation fed;
  const std::uint64_t shared_seed = derive_seed(config.seed, kSharedStream);
  for (const auto& part : partitions) {
    auto streams = data::make_windows(part, config.history, config.horizon,
                                      {config.train_fraction, config.validation_fraction, config.test_fraction});
    if (streams.train.empty() || streams.validation.empty() || streams.test.empty()) {
      throw std::runtime_error("client " + std::to_string(part.client_id) +
                               ": every split needs at least one window");
    }
    data::attach_normalization(streams);
    ModelConfig model;
    model.nodes = static_cast<Index>(part.node_indices.size());
    model.hidden = config.hidden;
    model.embed = config.embed;
    model.layers = config.layers;
    model.horizon = config.horizon;
    model.personal_patterns = config.personal_patterns;
    model.global_patterns = config.global_patterns;
    model.alpha = config.alpha;
    model.personal_init = config.personal_init;
    model.global_init = config.global_init;
    model.personalized_extractor = decouple;
    fed.clients.push_back(std::make_unique<protocol::Client>(part.client_id, model, std::move(streams), train,
                                                             shared_seed,
                                                             derive_seed(config.seed, kClientStreamBase + part.client_id)));
    fed.probes.push_back(fed.clients.back()->privacy_probe());
  }
  return fed;
}

ReportBundle run_federated_experiment(const ExperimentConfig& config, const RunHooks& hooks) {
  const auto start = Clock::now();
  const long checks_before = protocol::privacy_checks_performed();
  Federation fed = build_federation(config);
  const std::size_t m = fed.clients.size();

  ReportBundle bundle;
  bundle.config = config;
  for (const auto& c : fed.clients) {
    bundle.client_nodes.push_back(static_cast<std::size_t>(c->model().config().nodes));
    bundle.validation_weights.push_back(static_cast<double>(c->streams().validation.size()));
    bundle.test_weights.push_back(static_cast<double>(c->streams().test.size()));
  }

  bundle.untrained_validation = evaluate_all(fed, false, config.mape_threshold);
  bundle.untrained_validation_macro = metrics::weighted_macro(bundle.untrained_validation, bundle.validation_weights);
  double best_mae = bundle.untrained_validation_macro.mae;
  std::vector<ParamStore> best_state;
  for (const auto& c : fed.clients) best_state.push_back(c->model().params());

  protocol::ServerOptions server;
  server.mode = config.mode;
  server.top_k = config.top_k;
  server.tau = config.tau;
  server.epsilon = config.epsilon;
  server.cps_include_self = config.cps_include_self;
  server.ablation = config.ablation;

  const bool write_checkpoints = config.checkpoints && !hooks.checkpoint_dir.empty();
  if (write_checkpoints) std::filesystem::create_directories(hooks.checkpoint_dir);

  for (Index round = 1; round <= config.rounds; ++round) {
    const auto round_start = Clock::now();
    RoundRecord record;
    record.round = round;

    std::vector<protocol::ClientUpdate> uploads;
    for (std::size_t i = 0; i < m; ++i) {
      auto& client = *fed.clients[i];
      const auto update = client.local_round(std::nullopt);
      record.training.push_back(client.last_round());
      uploads.push_back(protocol::transmit_upload(update, fed.probes[i]));
    }

    const auto agg_start = Clock::now();
    auto result = protocol::server_round(uploads, server, m);
    record.aggregation_seconds = seconds_since(agg_start);
    record.patterns_replaced = result.patterns_replaced;
    record.fusion_weights = result.fusion_weights;

    std::vector<protocol::ServerPayload> delivered;
    for (std::size_t i = 0; i < m; ++i) {
      delivered.push_back(protocol::transmit_payload(result.payloads[i]));
      fed.clients[delivered.back().client_id]->install(delivered.back());
    }
    if (hooks.on_exchange) hooks.on_exchange(round, uploads, delivered);

    record.validation = evaluate_all(fed, false, config.mape_threshold);
    record.validation_macro = metrics::weighted_macro(record.validation, bundle.validation_weights);
    if (record.validation_macro.mae < best_mae) {
      best_mae = record.validation_macro.mae;
      bundle.best_round = round;
      for (std::size_t i = 0; i < m; ++i) best_state[i] = fed.clients[i]->model().params();
    }
    if (write_checkpoints) {
      char file[32];
      std::snprintf(file, sizeof file, "round_%03ld.fdta", static_cast<long>(round));
      const auto path = hooks.checkpoint_dir / file;
      write_checkpoint(fed, config, round, path);
      bundle.checkpoints.push_back(path);
    }
    record.seconds = seconds_since(round_start);
    log::info("round " + std::to_string(round) + " validation MAE " + std::to_string(record.validation_macro.mae));
    if (hooks.on_round) hooks.on_round(record);
    bundle.rounds.push_back(std::move(record));
  }

  for (std::size_t i = 0; i < m; ++i) fed.clients[i]->model().params() = best_state[i];
  bundle.test = evaluate_all(fed, true, config.mape_threshold);
  bundle.test_macro = metrics::weighted_macro(bundle.test, bundle.test_weights);
  bundle.privacy_checks = protocol::privacy_checks_performed() - checks_before;
  bundle.total_seconds = seconds_since(start);
  return bundle;
}

ExperimentConfig ablation_config(const ExperimentConfig& base, const std::string& variant) {
  ExperimentConfig c = base;
  c.mode = protocol::Mode::feddis;
  c.ablation = {};
  if (variant == "full") {
  } else if (variant == "no_cd") {
    c.ablation.no_cd = true;
  } else if (variant == "no_gp") {
    c.ablation.no_gp = true;
  } else if (variant == "no_wu") {
    c.ablation.no_wu = true;
  } else if (variant == "no_cps") {
    c.ablation.no_cps = true;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  }
  return c;
}

std::vector<ReportBundle> run_ablation(const ExperimentConfig& base,
                                       const std::function<RunHooks(const std::string&)>& hooks) {
  std::vector<ReportBundle> out;
  for (const auto& v : ablation_variants()) {
    auto bundle = run_federated_experiment(ablation_config(base, v), hooks ? hooks(v) : RunHooks{});
    bundle.variant = v;
    out.push_back(std::move(bundle));
  }
  return out;
}

std::vector<ReportBundle> run_sweep(const ExperimentConfig& base, const SweepGrid& grid,
                                    const std::function<RunHooks(const std::string&)>& hooks) {
  auto or_base = [](const std::vector<Index>& v, Index fallback) {
    return v.empty() ? std::vector<Index>{fallback} : v;
  };
  std::vector<ReportBundle> out;
  for (Index o : or_base(grid.global_patterns, base.global_patterns)) {
    for (Index b : or_base(grid.personal_patterns, base.personal_patterns)) {
      for (Index k : or_base(grid.top_k, base.top_k)) {
        ExperimentConfig c = base;
        c.global_patterns = o;
        c.personal_patterns = b;
        c.top_k = k;
        const std::string label = "O" + std::to_string(o) + "_B" + std::to_string(b) + "_K" + std::to_string(k);
        auto bundle = run_federated_experiment(c, hooks ? hooks(label) : RunHooks{});
        bundle.variant = label;
        out.push_back(std::move(bundle));
      }
    }
  }
  return out;
}

}  // namespace feddis
