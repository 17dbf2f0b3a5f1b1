#include "feddis/disentangle.hpp"
#include "feddis/model.hpp"
#include "feddis/protocol.hpp"

#include "support/desk.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace {

using namespace feddis;
using namespace feddis::disentangle;
using feddis::testing::random_matrix;

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

TEST(BankInit, WhitenedColumnsHaveIdentityCovariance) {
  const Matrix bank = init_personalized_bank(64, 8, 5, BankInit::random_pca_whiten);
  const Matrix centered = bank.rowwise() - bank.colwise().mean();
  const Matrix cov = centered.transpose() * centered / 63.0;
  EXPECT_LT(max_abs(cov - Matrix::Identity(8, 8)), 1e-6);
  EXPECT_EQ(init_personalized_bank(64, 8, 5, BankInit::random_pca_whiten), bank);
  EXPECT_NE(init_personalized_bank(64, 8, 6, BankInit::random_pca_whiten), bank);
}

TEST(BankInit, RandomIsUnwhitenedAndSinglePatternFallsBack) {
  const Matrix raw = init_personalized_bank(64, 8, 5, BankInit::random);
  const Matrix centered = raw.rowwise() - raw.colwise().mean();
  EXPECT_GT(max_abs(centered.transpose() * centered / 63.0 - Matrix::Identity(8, 8)), 1e-3);
  const Matrix one = init_personalized_bank(1, 4, 5, BankInit::random_pca_whiten);
  EXPECT_NEAR(one.row(0).norm(), 1.0, 1e-12);
  EXPECT_THROW(init_global_bank(0, 4, 1, BankInit::xavier), std::invalid_argument);
  EXPECT_EQ(parse_bank_init(bank_init_name(BankInit::kaiming)), BankInit::kaiming);
  EXPECT_THROW(parse_bank_init("orthogonal"), std::invalid_argument);
}

TEST(BankUpdate, MomentumBoundaries) {
  Rng rng(1);
  ad::Tape tape;
  const Matrix old = random_matrix(3, 2, rng);
  const Matrix cur = random_matrix(3, 2, rng);
  EXPECT_EQ(update_personalized_bank(tape.constant(cur), old, 0.0).value(), old);
  EXPECT_EQ(update_personalized_bank(tape.constant(cur), old, 1.0).value(), cur);
  EXPECT_EQ(update_personalized_bank(tape.constant(Matrix::Ones(3, 2)), Matrix::Zero(3, 2), 0.5).value(),
            Matrix::Constant(3, 2, 0.5));
  const Matrix mid = update_personalized_bank(tape.constant(cur), old, 0.3).value();
  EXPECT_LT((mid - (0.3 * cur + 0.7 * old)).cwiseAbs().maxCoeff(), 1e-15);
  for (Index i = 0; i < mid.size(); ++i) {
    EXPECT_GE(mid.data()[i], std::min(cur.data()[i], old.data()[i]));
    EXPECT_LE(mid.data()[i], std::max(cur.data()[i], old.data()[i]));
  }
  EXPECT_THROW(update_personalized_bank(tape.constant(cur), old, 1.5), std::invalid_argument);
}

TEST(BankUpdate, ProjectorActsOnSampleMeanOfEachNode) {
  ad::Tape tape;
  // Two nodes, two samples, node-major.
  Matrix d(4, 1);
  d << 1, 3, 10, 30;
  Matrix p(1, 2);
  p << 1, -1;
  const Matrix out = project_patterns(tape.constant(d), tape.constant(p), 2).value();
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0 - 20.0);
  EXPECT_THROW(project_patterns(tape.constant(d), tape.constant(Matrix::Ones(1, 3)), 2), std::invalid_argument);
}

ScoreNet random_net(ad::Tape& tape, Index c, Rng& rng) {
  return {tape.constant(random_matrix(c, c, rng)), tape.constant(random_matrix(c, c, rng)),
          tape.constant(random_matrix(1, c, rng)), tape.constant(random_matrix(c, 1, rng))};
}

TEST(PersonalizedAttend, Examples) {
  Rng rng(2);
  ad::Tape tape;
  const ad::Var features = tape.constant(random_matrix(5, 3, rng));
  const Matrix one = random_matrix(1, 3, rng);
  const Matrix single = personalized_attend(features, tape.constant(one), random_net(tape, 3, rng)).value();
  for (Index i = 0; i < 5; ++i) EXPECT_LT(max_abs(single.row(i) - one), 1e-15);

  Matrix twin(2, 3);
  twin << one, one;
  const Matrix w = ad::softmax_rows(personalized_scores(features, tape.constant(twin), random_net(tape, 3, rng))).value();
  EXPECT_LT(max_abs(w - Matrix::Constant(5, 2, 0.5)), 1e-15);

  Matrix scores(1, 2), bank(2, 2);
  scores << std::log(3.0), 0.0;
  bank << 1, 2, 5, -4;
  const Matrix out = attend_with_scores(tape.constant(scores), tape.constant(bank)).value();
  EXPECT_NEAR(out(0, 0), 0.75 * 1 + 0.25 * 5, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.75 * 2 - 0.25 * 4, 1e-15);
}

TEST(GlobalAttend, Examples) {
  Rng rng(3);
  ad::Tape tape;
  const ad::Var s = tape.constant(random_matrix(4, 3, rng));
  const ad::Var wq = tape.constant(random_matrix(3, 3, rng));
  const ad::Var bq = tape.constant(random_matrix(1, 3, rng));
  const Matrix one = random_matrix(1, 3, rng);
  const Matrix single = global_attend(s, tape.constant(one), wq, bq).value();
  for (Index i = 0; i < 4; ++i) EXPECT_LT(max_abs(single.row(i) - one), 1e-15);

  const Matrix bank = random_matrix(5, 3, rng);
  const Matrix zero_query =
      global_attend(s, tape.constant(bank), tape.constant(Matrix::Zero(3, 3)), tape.constant(Matrix::Zero(1, 3))).value();
  for (Index i = 0; i < 4; ++i) EXPECT_LT(max_abs(zero_query.row(i) - bank.colwise().mean()), 1e-14);
}

TEST(GlobalAttend, TwoNodeTwoPatternDirectEvaluation) {
  Matrix s(2, 2), wq(2, 2), bq(1, 2), w(2, 2);
  s << 0.5, -1.0, 2.0, 0.25;
  wq << 1.0, 0.5, -0.5, 2.0;
  bq << 0.1, -0.2;
  w << 1.0, 0.0, 0.3, -0.7;
  ad::Tape tape;
  const Matrix out = global_attend(tape.constant(s), tape.constant(w), tape.constant(wq), tape.constant(bq)).value();
  for (Index i = 0; i < 2; ++i) {
    const double q0 = s(i, 0) * wq(0, 0) + s(i, 1) * wq(1, 0) + bq(0, 0);
    const double q1 = s(i, 0) * wq(0, 1) + s(i, 1) * wq(1, 1) + bq(0, 1);
    const double l0 = q0 * w(0, 0) + q1 * w(0, 1);
    const double l1 = q0 * w(1, 0) + q1 * w(1, 1);
    const double b0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
    for (Index c = 0; c < 2; ++c) EXPECT_NEAR(out(i, c), b0 * w(0, c) + (1 - b0) * w(1, c), 1e-12);
  }
}

TEST(Heads, ZeroWeightsCancellationAndFusion) {
  Rng rng(4);
  ad::Tape tape;
  const Matrix f = random_matrix(3, 2, rng);
  const Matrix bias = random_matrix(1, 4, rng);
  const Matrix w = random_matrix(2, 4, rng);
  const Matrix constant =
      predict(tape.constant(f), tape.constant(f), tape.constant(Matrix::Zero(2, 4)), tape.constant(bias)).value();
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(constant.row(i), bias);
  const Matrix cancel = predict(tape.constant(f), tape.constant(-f), tape.constant(w), tape.constant(bias)).value();
  for (Index i = 0; i < 3; ++i) EXPECT_LT(max_abs(cancel.row(i) - bias), 1e-15);

  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 3, 4;
  EXPECT_EQ(fuse_predictions(tape.constant(a), tape.constant(b)).value(), (Matrix(1, 2) << 4, 6).finished());
  EXPECT_EQ(fuse_predictions(tape.constant(a), tape.constant(Matrix::Zero(1, 2))).value(), a);
  EXPECT_EQ(fuse_predictions(tape.constant(a), tape.constant(-a)).value(), Matrix::Zero(1, 2));
}

TEST(Heads, GradientWrtFeaturesEqualsGradientWrtRefined) {
  Rng rng(5);
  ad::Tape tape;
  const ad::Var f = tape.leaf(random_matrix(3, 2, rng));
  const ad::Var r = tape.leaf(random_matrix(3, 2, rng));
  const ad::Var out = predict(f, r, tape.constant(random_matrix(2, 4, rng)), tape.constant(random_matrix(1, 4, rng)));
  tape.backward(ad::sum_all(ad::square(out)));
  EXPECT_EQ(tape.grad(f), tape.grad(r));
}

/// Critic over width c with hidden width c, all tensors zero.
ParamStore zero_critic(Index c) {
  ParamStore store;
  Rng rng(0);
  init_critic(store, "critic", c, c, rng);
  for (const auto& name : store.names()) store.at(name).value.setZero();
  return store;
}

TEST(ClubLikelihood, ZeroResidualDensities) {
  const Index c = 3;
  ParamStore store = zero_critic(c);
  // mu(D) = relu(D + 10) - 10 = D for D > -10; log-variance = tanh(b2).
  store.at("critic.mu.w1").value = Matrix::Identity(c, c);
  store.at("critic.mu.b1").value.setConstant(10.0);
  store.at("critic.mu.w2").value = Matrix::Identity(c, c);
  store.at("critic.mu.b2").value.setConstant(-10.0);
  Rng rng(6);
  const Matrix s = random_matrix(5, c, rng);
  ad::Tape tape;
  const auto ll = [&] {
    const Critic critic = bind_critic(tape, store, "critic", true);
    return club_log_likelihood(tape.constant(s), tape.constant(s), critic).scalar();
  };
  const double unit = ll();
  EXPECT_NEAR(unit, -0.5 * c * std::log(2.0 * std::numbers::pi), 1e-12);
  store.at("critic.logvar.b2").value.setConstant(std::atanh(std::log(2.0)));
  EXPECT_NEAR(ll(), unit - 0.5 * c * std::log(2.0), 1e-12);
}

TEST(ClubLikelihood, MatchesScalarDensityLoop) {
  Rng rng(7);
  ParamStore store;
  init_critic(store, "critic", 3, 5, rng);
  for (const auto& name : store.names()) store.at(name).value = random_matrix(store.at(name).value.rows(),
                                                                               store.at(name).value.cols(), rng, 0.5);
  const Matrix s = random_matrix(6, 3, rng);
  const Matrix d = random_matrix(6, 3, rng);
  ad::Tape tape;
  const Critic critic = bind_critic(tape, store, "critic", true);
  const double got = club_log_likelihood(tape.constant(s), tape.constant(d), critic).scalar();

  auto relu = [](double x) { return x > 0 ? x : 0.0; };
  auto head = [&](const std::string& h, Index i, Index out_col) {
    const Matrix& w1 = store.at("critic." + h + ".w1").value;
    const Matrix& b1 = store.at("critic." + h + ".b1").value;
    const Matrix& w2 = store.at("critic." + h + ".w2").value;
    double acc = store.at("critic." + h + ".b2").value(0, out_col);
    for (Index k = 0; k < w1.cols(); ++k) {
      double hidden = b1(0, k);
      for (Index j = 0; j < d.cols(); ++j) hidden += d(i, j) * w1(j, k);
      acc += relu(hidden) * w2(k, out_col);
    }
    return acc;
  };
  double total = 0.0;
  for (Index i = 0; i < s.rows(); ++i)
    for (Index c = 0; c < s.cols(); ++c) {
      const double mu = head("mu", i, c);
      const double lv = std::tanh(head("logvar", i, c));
      total += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * lv - (s(i, c) - mu) * (s(i, c) - mu) / (2.0 * std::exp(lv));
    }
  EXPECT_NEAR(got, total / static_cast<double>(s.rows()), 1e-10);
}

TEST(ClubEstimate, ConstantCriticAndSingleRowGiveZero) {
  Rng rng(8);
  ParamStore store;
  init_critic(store, "critic", 4, 6, rng);
  store.at("critic.mu.w1").value.setZero();
  store.at("critic.logvar.w1").value.setZero();
  store.at("critic.mu.b1").value = random_matrix(1, 6, rng).cwiseAbs();
  store.at("critic.logvar.b1").value = random_matrix(1, 6, rng).cwiseAbs();
  ad::Tape tape;
  const Critic critic = bind_critic(tape, store, "critic", true);
  const double mi =
      club_mi_estimate(tape.constant(random_matrix(50, 4, rng, 3.0)), tape.constant(random_matrix(50, 4, rng)), critic)
          .scalar();
  EXPECT_LE(std::abs(mi), 1e-12);
  EXPECT_EQ(club_mi_estimate(tape.constant(random_matrix(1, 4, rng)), tape.constant(random_matrix(1, 4, rng)), critic)
                .scalar(),
            0.0);
  EXPECT_THROW(club_mi_estimate(tape.constant(random_matrix(3, 4, rng)), tape.constant(random_matrix(2, 4, rng)), critic),
               std::invalid_argument);
}

TEST(ClubEstimate, MomentFormMatchesPairwiseEnumeration) {
  Rng rng(9);
  ParamStore store;
  init_critic(store, "critic", 3, 4, rng);
  const Matrix s = random_matrix(7, 3, rng);
  const Matrix d = random_matrix(7, 3, rng);
  ad::Tape tape;
  const Critic critic = bind_critic(tape, store, "critic", true);
  const double got = club_mi_estimate(tape.constant(s), tape.constant(d), critic).scalar();
  const auto out = critic_forward(tape.constant(d), critic);
  const Matrix& mu = out.mean.value();
  const Matrix& lv = out.log_variance.value();
  double total = 0.0;
  for (Index i = 0; i < 7; ++i) {
    double pos = 0.0, neg = 0.0;
    for (Index c = 0; c < 3; ++c) {
      auto logq = [&](Index j) {
        return -0.5 * std::log(2 * std::numbers::pi) - 0.5 * lv(i, c) -
               (s(j, c) - mu(i, c)) * (s(j, c) - mu(i, c)) / (2 * std::exp(lv(i, c)));
      };
      pos += logq(i);
      for (Index j = 0; j < 7; ++j) neg += logq(j) / 7.0;
    }
    total += pos - neg;
  }
  EXPECT_NEAR(got, total / 7.0, 1e-12);
}

TEST(TotalLoss, Examples) {
  ad::Tape tape;
  Matrix pred(1, 2), target(1, 2), mi(1, 1);
  pred << 1.0, 2.0;
  target << 1.4, 1.6;
  mi << 0.2;
  EXPECT_NEAR(total_loss(tape.constant(pred), target, tape.constant(mi), 0.5).scalar(), 0.5, 1e-15);
  EXPECT_NEAR(total_loss(tape.constant(pred), target, tape.constant(mi), 0.0).scalar(), 0.4, 1e-15);
  EXPECT_NEAR(total_loss(tape.constant(pred), pred, tape.constant(mi), 0.5).scalar(), 0.1, 1e-15);
  // With lambda = 0 the estimate may be absent.
  EXPECT_NEAR(total_loss(tape.constant(pred), target, ad::Var{}, 0.0).scalar(), 0.4, 1e-15);
}

TEST(Objective, GradientMatchesFiniteDifferencesAtDeskScale) {
  const auto report = feddis::testing::desk_objective_gradcheck(1);
  EXPECT_GT(report.tensors, 40u);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst;
}

/// CLUB estimate of a model's (S, D_hat) on a batch, with a freshly fitted critic.
double fitted_club(DualBranchModel& model, const data::WindowBatch& batch, std::uint64_t seed) {
  ad::Tape tape;
  const auto f = model.forward(tape, batch, false);
  const Matrix s = f.global_features.value();
  const Matrix d = f.personal_refined.value();
  ParamStore store;
  Rng rng(seed);
  init_critic(store, "critic", s.cols(), s.cols(), rng);
  Adam adam({0.01});
  for (int step = 0; step < 300; ++step) {
    store.zero_grad();
    ad::Tape t;
    const Critic critic = bind_critic(t, store, "critic", false);
    t.backward(ad::scale(club_log_likelihood(t.constant(s), t.constant(d), critic), -1.0));
    adam.step(store.trainable_params());
  }
  ad::Tape t;
  return club_mi_estimate(t.constant(s), t.constant(d), bind_critic(t, store, "critic", true)).scalar();
}

TEST(Objective, PenaltyLowersDependenceAcrossSeeds) {
  int held = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    double estimate[2];
    for (int with_penalty = 0; with_penalty < 2; ++with_penalty) {
      protocol::TrainOptions options;
      // The critic has to keep pace with the encoder; a slow critic is gamed
      // and a refitted one then finds more dependence, not less.
      options.lambda = with_penalty ? 3.0 : 0.0;
      options.adam.learning_rate = 0.01;
      options.critic_adam.learning_rate = 0.1;
      ModelConfig config = feddis::testing::desk_model();
      protocol::Client client(0, config, feddis::testing::toy_streams(60, config.nodes, 3, 2, seed), options, seed,
                              seed + 100);
      const auto batch = client.streams().train.range(0, 8);
      for (int step = 0; step < 100; ++step) client.train_batch(batch);
      estimate[with_penalty] = fitted_club(client.model(), batch, seed);
    }
    if (estimate[1] < estimate[0]) ++held;
  }
  EXPECT_GE(held, 2);
}

}  // namespace
