#include "feddis/config.hpp"
#include "feddis/experiment.hpp"
#include "feddis/metrics.hpp"
#include "feddis/report.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace {

using namespace feddis;
namespace fs = std::filesystem;

Matrix row_of(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TEST(Metrics, Examples) {
  const auto m = metrics::compute_metrics(row_of({2, 1}), row_of({1, 3}));
  EXPECT_DOUBLE_EQ(m.mae, 1.5);
  EXPECT_NEAR(m.rmse, 1.5811, 1e-4);
  EXPECT_NEAR(m.mape_pct, 83.33, 1e-2);
  EXPECT_EQ(m.count, 2u);

  const auto exact = metrics::compute_metrics(row_of({4, 5}), row_of({4, 5}));
  EXPECT_EQ(exact.mae, 0.0);
  EXPECT_EQ(exact.rmse, 0.0);
  EXPECT_EQ(exact.mape_pct, 0.0);

  const auto masked = metrics::compute_metrics(row_of({1, 3}), row_of({0, 2}));
  EXPECT_DOUBLE_EQ(masked.mae, 1.0);
  EXPECT_DOUBLE_EQ(masked.mape_pct, 50.0);

  const auto none = metrics::compute_metrics(row_of({1}), row_of({0}));
  EXPECT_FALSE(none.mape_defined);
  EXPECT_EQ(metrics::format_mape(none), metrics::kUndefined);
  EXPECT_THROW(metrics::compute_metrics(row_of({1}), row_of({1, 2})), std::invalid_argument);
}

TEST(Metrics, WeightedMacroSkipsUndefinedMape) {
  metrics::Metrics a{1.0, 2.0, 10.0, true, 4}, b{3.0, 4.0, 0.0, false, 4};
  const auto m = metrics::weighted_macro({a, b}, {1.0, 3.0});
  EXPECT_DOUBLE_EQ(m.mae, 2.5);
  EXPECT_DOUBLE_EQ(m.rmse, 3.5);
  EXPECT_DOUBLE_EQ(m.mape_pct, 10.0);
  EXPECT_TRUE(m.mape_defined);
}

TEST(Config, ParseOverrideAndEchoRoundTrip) {
  const auto c = parse_config("# comment\nrounds = 7\nmode = fedprox\nno_cps = true\nlr = 0.25  # inline\n");
  EXPECT_EQ(c.rounds, 7);
  EXPECT_EQ(c.mode, protocol::Mode::fedprox);
  EXPECT_TRUE(c.ablation.no_cps);
  EXPECT_DOUBLE_EQ(c.lr, 0.25);

  ExperimentConfig d = c;
  apply_overrides(d, {"seed=9", "hidden=5"});
  EXPECT_EQ(d.seed, 9u);
  EXPECT_EQ(d.hidden, 5);

  const auto back = parse_config(echo_config(d));
  EXPECT_EQ(echo_config(back), echo_config(d));
  for (const auto& key : config_keys()) EXPECT_EQ(get_config_value(back, key), get_config_value(d, key)) << key;
}

TEST(Config, InvalidInputsAreDiagnosed) {
  EXPECT_THROW(parse_config("no_such_key = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("rounds = many\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("rounds 3\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("mode = fedsgd\n"), std::invalid_argument);

  ExperimentConfig c;
  EXPECT_NO_THROW(validate_config(c));
  auto bad = [&](const std::string& kv) {
    ExperimentConfig x;
    apply_overrides(x, {kv});
    EXPECT_THROW(validate_config(x), std::invalid_argument) << kv;
  };
  bad("alpha=1.5");
  bad("hidden=0");
  bad("epsilon=0");
  bad("train_fraction=0.9");
  bad("clients=0");
  bad("rounds=-1");
  bad("personal_patterns=0");
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.name = "tiny";
  c.clients = 2;
  c.synth_nodes_per_client = 3;
  c.synth_steps = 120;
  c.history = 3;
  c.horizon = 2;
  c.hidden = 4;
  c.embed = 2;
  c.personal_patterns = 3;
  c.global_patterns = 3;
  c.top_k = 2;
  c.batch_size = 16;
  c.rounds = 2;
  c.checkpoints = false;
  return c;
}

class RunDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("feddis_harness_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST(Experiment, ZeroRoundsEvaluatesOnlyTheUntrainedModel) {
  auto c = tiny_experiment();
  c.rounds = 0;
  const auto b = run_federated_experiment(c);
  EXPECT_TRUE(b.rounds.empty());
  EXPECT_EQ(b.best_round, 0);
  EXPECT_EQ(b.test.size(), 2u);
  EXPECT_EQ(b.privacy_checks, 0);
  EXPECT_EQ(line_count(report::metrics_csv(b)), 1u);
}

TEST(Experiment, RoundsAreRecordedAndEveryUploadIsChecked) {
  auto c = tiny_experiment();
  Index exchanges = 0;
  RunHooks hooks;
  hooks.on_exchange = [&](Index round, const auto& ups, const auto& payloads) {
    EXPECT_EQ(round, exchanges + 1);
    EXPECT_EQ(ups.size(), 2u);
    EXPECT_EQ(payloads.size(), 2u);
    ++exchanges;
  };
  const auto b = run_federated_experiment(c, hooks);
  EXPECT_EQ(exchanges, 2);
  ASSERT_EQ(b.rounds.size(), 2u);
  EXPECT_EQ(b.privacy_checks, 4);
  EXPECT_EQ(line_count(report::metrics_csv(b)), 1u + 2u);

  // The best round is the argmin of validation MAE including the untrained model.
  double best = b.untrained_validation_macro.mae;
  Index arg = 0;
  for (const auto& r : b.rounds) {
    EXPECT_TRUE(std::isfinite(r.training[0].loss));
    if (r.validation_macro.mae < best) {
      best = r.validation_macro.mae;
      arg = r.round;
    }
  }
  EXPECT_EQ(b.best_round, arg);
}

TEST(Experiment, RepeatedRunsAreBitIdentical) {
  auto c = tiny_experiment();
  std::vector<std::string> first, second;
  auto record = [](std::vector<std::string>& out) {
    RunHooks h;
    h.on_exchange = [&out](Index, const auto& ups, const auto& payloads) {
      for (const auto& u : ups) out.push_back(protocol::encode_update(u));
      for (const auto& p : payloads) out.push_back(protocol::encode_payload(p));
    };
    return h;
  };
  const auto a = run_federated_experiment(c, record(first));
  const auto b = run_federated_experiment(c, record(second));
  ASSERT_EQ(first.size(), 8u);
  EXPECT_EQ(first, second);
  EXPECT_EQ(a.test_macro.mae, b.test_macro.mae);
}

TEST_F(RunDir, ReportFilesAndConfigEcho) {
  const auto c = tiny_experiment();
  const auto b = run_federated_experiment(c);
  report::emit_report(b, dir_);
  for (const char* f : {"config.txt", "metrics.csv", "metrics_clients.csv", "final_metrics.csv", "round_log.jsonl",
                        "summary.json", "summary.md", "mae.svg", "rmse.svg"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  EXPECT_EQ(echo_config(load_config(dir_ / "config.txt")), echo_config(c));
  EXPECT_EQ(line_count(slurp(dir_ / "round_log.jsonl")), 2u);
  EXPECT_EQ(slurp(dir_ / "metrics.csv").rfind("round,split,client_id,mae,rmse,mape_pct,seconds", 0), 0u);
}

TEST_F(RunDir, AblationProducesFiveVariantsFromOneSeed) {
  auto c = tiny_experiment();
  c.rounds = 1;
  const auto bundles = run_ablation(c);
  ASSERT_EQ(bundles.size(), 5u);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    EXPECT_EQ(bundles[i].variant, ablation_variants()[i]);
    EXPECT_EQ(bundles[i].config.seed, c.seed);
  }
  EXPECT_TRUE(bundles[2].config.ablation.no_gp);
  EXPECT_TRUE(bundles[1].config.ablation.no_cd);
  report::emit_family(bundles, dir_, "ablation");
  std::size_t subdirs = 0;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (!e.is_directory()) continue;
    ++subdirs;
    EXPECT_TRUE(fs::exists(e.path() / "metrics.csv"));
  }
  EXPECT_EQ(subdirs, 5u);
}

TEST(Experiment, AblationConfigRejectsUnknownVariant) {
  EXPECT_THROW(ablation_config(tiny_experiment(), "no_everything"), std::invalid_argument);
}

TEST(Report, SvgIsWellFormed) {
  const auto svg = report::line_plot_svg("t", "y", {{"a", {0, 1, 2}, {3, 2, 1}}});
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
}

}  // namespace
