#include "feddis/encoder.hpp"
#include "feddis/model.hpp"

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracle.hpp"

#include <gtest/gtest.h>

namespace {

using namespace feddis;
using feddis::testing::random_matrix;
namespace oracle = feddis::testing::oracle;

TEST(Adjacency, Examples) {
  ad::Tape tape;
  const Matrix uniform = encoder::adaptive_adjacency(tape.constant(Matrix::Zero(3, 2))).value();
  EXPECT_LT((uniform - Matrix::Constant(3, 3, 1.0 / 3.0)).cwiseAbs().maxCoeff(), 1e-15);

  EXPECT_EQ(encoder::adaptive_adjacency(tape.constant(Matrix::Constant(1, 4, 0.7))).value(), Matrix::Ones(1, 1));

  const Matrix a = encoder::adaptive_adjacency(tape.constant(Matrix::Identity(2, 2))).value();
  const double hi = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(a(0, 0), hi, 1e-12);
  EXPECT_NEAR(a(0, 1), 1.0 - hi, 1e-12);
  EXPECT_NEAR(a(1, 1), hi, 1e-12);
  EXPECT_NEAR(a(0, 0), 0.7311, 1e-4);
}

TEST(Adjacency, RowsOnSimplexForRandomEmbeddings) {
  Rng rng(21);
  ad::Tape tape;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<Index>(1 + rng.below(12));
    const Matrix a =
        encoder::adaptive_adjacency(tape.constant(random_matrix(n, 1 + rng.below(6), rng, 0.1 + 4 * rng.uniform())))
            .value();
    EXPECT_GE(a.minCoeff(), 0.0);
    EXPECT_LT((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  }
}

TEST(GraphConv, Examples) {
  ad::Tape tape;
  Rng rng(4);
  const Matrix x = random_matrix(3, 2, rng);
  const auto identity = encoder::graph_conv(tape.constant(x), tape.constant(Matrix::Identity(3, 3)),
                                            tape.constant(Matrix::Identity(2, 2)), tape.constant(Matrix::Zero(1, 2)));
  EXPECT_EQ(identity.value(), x);

  const Matrix w = random_matrix(2, 3, rng);
  const Matrix b = random_matrix(1, 3, rng);
  const Matrix avg = encoder::graph_conv(tape.constant(x), tape.constant(Matrix::Constant(3, 3, 1.0 / 3.0)),
                                         tape.constant(w), tape.constant(b))
                         .value();
  for (Index i = 1; i < 3; ++i) EXPECT_LT((avg.row(i) - avg.row(0)).cwiseAbs().maxCoeff(), 1e-14);
  const Matrix expect_row = (x * w).colwise().mean() + b;
  EXPECT_LT((avg.row(0) - expect_row).cwiseAbs().maxCoeff(), 1e-14);

  Matrix x2(2, 1), w2(1, 1), b2(1, 1);
  x2 << 1, 3;
  w2 << 2;
  b2 << 1;
  const Matrix r = encoder::graph_conv(tape.constant(x2), tape.constant(Matrix::Constant(2, 2, 0.5)),
                                       tape.constant(w2), tape.constant(b2))
                       .value();
  EXPECT_DOUBLE_EQ(r(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(r(1, 0), 5.0);
}

TEST(GraphConv, LinearWithZeroBias) {
  Rng rng(8);
  ad::Tape tape;
  const ad::Var a = tape.constant(random_matrix(4, 4, rng));
  const ad::Var w = tape.constant(random_matrix(3, 2, rng));
  const ad::Var b = tape.constant(Matrix::Zero(1, 2));
  const Matrix x1 = random_matrix(8, 3, rng);
  const Matrix x2 = random_matrix(8, 3, rng);
  const double s = 1.7, t = -0.4;
  const Matrix lhs = encoder::graph_conv(tape.constant(s * x1 + t * x2), a, w, b).value();
  const Matrix rhs =
      s * encoder::graph_conv(tape.constant(x1), a, w, b).value() + t * encoder::graph_conv(tape.constant(x2), a, w, b).value();
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(encoder::graph_conv(tape.constant(x1), a, tape.constant(Matrix::Zero(2, 2)), b), std::invalid_argument);
}

encoder::AgrLayer constant_layer(ad::Tape& tape, Index in, Index c, double value) {
  auto m = [&](Index r, Index k) { return tape.constant(Matrix::Constant(r, k, value)); };
  return {m(in + c, c), m(1, c), m(in + c, c), m(1, c), m(in + c, c), m(1, c)};
}

TEST(AgrCell, ZeroParameterFixedPoints) {
  ad::Tape tape;
  Rng rng(6);
  const auto layer = constant_layer(tape, 1, 3, 0.0);
  const ad::Var a = tape.constant(Matrix::Constant(2, 2, 0.5));
  const Matrix h_prev = random_matrix(2, 3, rng);
  const ad::Var x = tape.constant(random_matrix(2, 1, rng));
  const auto gates = encoder::agr_gates(x, tape.constant(h_prev), a, layer);
  EXPECT_EQ(gates.z.value(), Matrix::Constant(2, 3, 0.5));
  EXPECT_EQ(gates.r.value(), Matrix::Constant(2, 3, 0.5));
  EXPECT_LT((encoder::agr_cell_step(x, tape.constant(h_prev), a, layer).value() - 0.5 * h_prev).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_EQ(encoder::agr_cell_step(x, tape.constant(Matrix::Zero(2, 3)), a, layer).value(), Matrix::Zero(2, 3));
}

TEST(AgrCell, GatesStrictlyInsideUnitInterval) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    ad::Tape tape;
    const Index n = 1 + static_cast<Index>(rng.below(6));
    const Index c = 1 + static_cast<Index>(rng.below(6));
    const double scale = 0.1 + 2.0 * rng.uniform();
    auto m = [&](Index r, Index k) { return tape.constant(random_matrix(r, k, rng, scale)); };
    const encoder::AgrLayer layer{m(1 + c, c), m(1, c), m(1 + c, c), m(1, c), m(1 + c, c), m(1, c)};
    const ad::Var a = encoder::adaptive_adjacency(m(n, 3));
    const auto g = encoder::agr_gates(m(2 * n, 1), m(2 * n, c), a, layer);
    for (const Matrix* v : {&g.z.value(), &g.r.value()}) {
      EXPECT_GT(v->minCoeff(), 0.0);
      EXPECT_LT(v->maxCoeff(), 1.0);
    }
  }
}

TEST(Encoder, MatchesStraightLineOracle) {
  const ModelConfig config = feddis::testing::desk_model();
  DualBranchModel model(config, 1, 2);
  const auto streams = feddis::testing::toy_streams(40, config.nodes, 3, 2, 5);
  const auto batch = streams.train.range(0, 3);
  ad::Tape tape;
  const auto f = model.forward(tape, batch, false);

  oracle::Values values;
  for (const auto& [name, e] : model.params().entries()) values[name] = e.param.value;
  const auto store = oracle::lift<double>(values);
  const auto samples = oracle::samples_from(streams.train);
  for (Index b = 0; b < 3; ++b) {
    const auto s = oracle::encode<double>(store, "global", samples[static_cast<std::size_t>(b)], config.layers);
    const auto d = oracle::encode<double>(store, "personal", samples[static_cast<std::size_t>(b)], config.layers);
    for (Index n = 0; n < config.nodes; ++n) {
      const Index row = n * 3 + b;
      EXPECT_LT((f.global_features.value().row(row) - s.row(n)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((f.personal_features.value().row(row) - d.row(n)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Encoder, SingleStepIsOneCellPerLayerAndZeroInputStaysZero) {
  Rng rng(9);
  ad::Tape tape;
  const Index n = 3, c = 4;
  auto m = [&](Index r, Index k) { return tape.constant(random_matrix(r, k, rng, 0.5)); };
  std::vector<encoder::AgrLayer> layers = {{m(1 + c, c), m(1, c), m(1 + c, c), m(1, c), m(1 + c, c), m(1, c)},
                                           {m(2 * c, c), m(1, c), m(2 * c, c), m(1, c), m(2 * c, c), m(1, c)}};
  const ad::Var e = m(n, 2);
  const Matrix x = random_matrix(n, 1, rng);
  const Matrix out = encoder::encode_sequence(tape, {x}, layers, e).value();
  const ad::Var a = encoder::adaptive_adjacency(e);
  const ad::Var h0 = encoder::agr_cell_step(tape.constant(x), tape.constant(Matrix::Zero(n, c)), a, layers[0]);
  const ad::Var h1 = encoder::agr_cell_step(h0, tape.constant(Matrix::Zero(n, c)), a, layers[1]);
  EXPECT_EQ(out, h1.value());

  std::vector<encoder::AgrLayer> zero = {constant_layer(tape, 1, c, 0.0), constant_layer(tape, c, c, 0.0)};
  const Matrix z = encoder::encode_sequence(tape, {Matrix::Zero(n, 1), Matrix::Zero(n, 1)}, zero, e).value();
  EXPECT_EQ(z, Matrix::Zero(n, c));
  EXPECT_THROW(encoder::encode_sequence(tape, {}, layers, e), std::invalid_argument);
}

TEST(Encoder, BranchesAreIndependent) {
  const ModelConfig config = feddis::testing::desk_model();
  DualBranchModel model(config, 1, 2);
  const auto streams = feddis::testing::toy_streams(40, config.nodes, 3, 2, 5);
  const auto batch = streams.train.range(0, 2);
  ad::Tape t1;
  const Matrix s_before = model.forward(t1, batch, false).global_features.value();
  for (const auto& name : model.params().names()) {
    if (name.rfind("personal.", 0) == 0 && name != names::kPersonalBank) model.params().at(name).value.array() += 0.3;
  }
  ad::Tape t2;
  const auto after = model.forward(t2, batch, false);
  EXPECT_EQ(after.global_features.value(), s_before);
}

TEST(Encoder, GradientOfOutputSumMatchesFiniteDifferences) {
  const ModelConfig config = feddis::testing::desk_model();
  DualBranchModel model(config, 3, 4);
  const auto streams = feddis::testing::toy_streams(40, config.nodes, 3, 2, 7);
  const auto batch = streams.train.range(0, 2);
  ParamStore& store = model.params();
  auto params = store.trainable_params({"global.agr", "global.embedding"});

  store.zero_grad();
  {
    ad::Tape tape;
    const auto layers = encoder::bind_layers(tape, store, "global", config.layers);
    tape.backward(ad::sum_all(
        encoder::encode_sequence(tape, batch.inputs, layers, tape.bind(store.at(names::kGlobalEmbedding)))));
  }
  std::vector<Matrix> analytic;
  for (auto& [name, p] : params) analytic.push_back(p->grad);
  auto loss = [&]() {
    ad::Tape tape;
    const auto layers = encoder::bind_layers(tape, store, "global", config.layers);
    return ad::sum_all(encoder::encode_sequence(tape, batch.inputs, layers, tape.constant(store.at(names::kGlobalEmbedding).value)))
        .scalar();
  };
  const auto report = feddis::testing::check_gradients(params, analytic, loss);
  EXPECT_EQ(report.tensors, 2u * 6u + 1u);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
}

}  // namespace
