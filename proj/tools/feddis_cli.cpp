// Command-line front end: run, ablate, sweep, synth.

#include "feddis/config.hpp"
#include "feddis/data.hpp"
#include "feddis/experiment.hpp"
#include "feddis/log.hpp"
#include "feddis/report.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace feddis;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out;
  bool verbose = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override one field, key=value (repeatable)");
    app->add_option("-o,--out", out, "output directory (default $FEDDIS_OUT/<name>)");
    app->add_flag("-v,--verbose", verbose, "log every round");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = config_file.empty() ? ExperimentConfig{} : load_config(config_file);
    apply_overrides(c, overrides);
    validate_config(c);
    if (verbose) log::level() = log::Level::info;
    return c;
  }

  std::filesystem::path dir(const ExperimentConfig& c) const {
    return out.empty() ? report::output_root() / c.name : std::filesystem::path(out);
  }
};

// Appends one line per round as it finishes, so a failed run keeps its log.
RunHooks streaming_hooks(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto log = std::make_shared<std::ofstream>(dir / "round_log.jsonl");
  RunHooks hooks;
  hooks.checkpoint_dir = dir / "checkpoints";
  hooks.on_round = [log](const RoundRecord& r) {
    *log << report::round_json(r).dump() << '\n';
    log->flush();
    std::cerr << "round " << r.round << "  val MAE " << r.validation_macro.mae << "  (" << r.seconds << " s)\n";
  };
  return hooks;
}

std::vector<Index> parse_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stol(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated traffic forecasting with dual-branch disentanglement"};
  app.require_subcommand(1);

  Common run_opts, ablate_opts, sweep_opts;
  auto* run = app.add_subcommand("run", "one federated experiment");
  run_opts.attach(run);

  auto* ablate = app.add_subcommand("ablate", "full model and the four ablations");
  ablate_opts.attach(ablate);

  auto* sweep = app.add_subcommand("sweep", "grid over bank sizes and K");
  sweep_opts.attach(sweep);
  std::string grid_o, grid_b, grid_k;
  sweep->add_option("--global-patterns", grid_o, "comma-separated O values");
  sweep->add_option("--personal-patterns", grid_b, "comma-separated B values");
  sweep->add_option("--top-k", grid_k, "comma-separated K values");

  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark to disk");
  data::SyntheticConfig synth_cfg;
  std::uint64_t synth_seed = 1;
  std::string synth_out = "synthetic.csv", synth_partition;
  synth->add_option("--clients", synth_cfg.clients);
  synth->add_option("--nodes-per-client", synth_cfg.nodes_per_client);
  synth->add_option("--steps", synth_cfg.steps);
  synth->add_option("--prototypes", synth_cfg.prototypes);
  synth->add_option("--amplitude", synth_cfg.client_amplitude);
  synth->add_option("--noise", synth_cfg.noise_std);
  synth->add_option("--seed", synth_seed);
  synth->add_option("-o,--out", synth_out, "dataset path (.csv or matrix-binary)");
  synth->add_option("--partition-out", synth_partition, "also write the ground-truth partition file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto config = run_opts.load();
      const auto dir = run_opts.dir(config);
      const auto bundle = run_federated_experiment(config, streaming_hooks(dir));
      report::emit_report(bundle, dir);
      std::cout << "test MAE " << bundle.test_macro.mae << "  RMSE " << bundle.test_macro.rmse << "  MAPE "
                << metrics::format_mape(bundle.test_macro) << "%  (best round " << bundle.best_round << ")\n"
                << "report: " << dir.string() << '\n';
    } else if (*ablate) {
      const auto config = ablate_opts.load();
      const auto dir = ablate_opts.dir(config);
      const auto bundles =
          run_ablation(config, [&](const std::string& v) { return streaming_hooks(dir / v); });
      report::emit_family(bundles, dir, "Ablation");
      for (const auto& b : bundles) std::cout << b.variant << "  test MAE " << b.test_macro.mae << '\n';
      std::cout << "report: " << dir.string() << '\n';
    } else if (*sweep) {
      const auto config = sweep_opts.load();
      const auto dir = sweep_opts.dir(config);
      const SweepGrid grid{parse_list(grid_o), parse_list(grid_b), parse_list(grid_k)};
      const auto bundles = run_sweep(config, grid, [&](const std::string& v) { return streaming_hooks(dir / v); });
      report::emit_family(bundles, dir, "Sweep");
      for (const auto& b : bundles) std::cout << b.variant << "  test MAE " << b.test_macro.mae << '\n';
      std::cout << "report: " << dir.string() << '\n';
    } else if (*synth) {
      const auto ds = data::generate_synthetic(synth_cfg, synth_seed);
      data::save_dataset(ds.series, synth_out, data::format_from_path(synth_out));
      if (!synth_partition.empty()) data::write_partition_file(ds.partition, synth_partition);
      std::cout << "wrote " << ds.series.steps() << " x " << ds.series.nodes() << " to " << synth_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
