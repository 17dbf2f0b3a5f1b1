#include "feddis/disentangle.hpp"

#include "feddis/log.hpp"
#include "feddis/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace feddis::disentangle {

BankInit parse_bank_init(const std::string& name) {
  if (name == "random") return BankInit::random;
  if (name == "xavier") return BankInit::xavier;
  if (name == "kaiming") return BankInit::kaiming;
  if (name == "random+pca-whiten" || name == "pca-whiten" || name == "default") return BankInit::random_pca_whiten;
  throw std::invalid_argument("unknown bank initialization '" + name + "'");
}

const char* bank_init_name(BankInit init) {
  switch (init) {
    case BankInit::random: return "random";
    case BankInit::xavier: return "xavier";
    case BankInit::kaiming: return "kaiming";
    case BankInit::random_pca_whiten: return "random+pca-whiten";
  }
  return "unknown";
}

namespace {

Matrix draw(Index rows, Index cols, Rng& rng, BankInit strategy) {
  switch (strategy) {
    case BankInit::xavier: return init::xavier_uniform(rows, cols, rng);
    case BankInit::kaiming: return init::kaiming_normal(rows, cols, rng);
    case BankInit::random:
    case BankInit::random_pca_whiten: return init::standard_normal(rows, cols, rng);
  }
  return init::standard_normal(rows, cols, rng);
}

Matrix pca_whiten(const Matrix& x) {
  const Index n = x.rows();
  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, values.maxCoeff());
  Eigen::VectorXd inv_sqrt(values.size());
  for (Index i = 0; i < values.size(); ++i) inv_sqrt(i) = values(i) > cutoff ? 1.0 / std::sqrt(values(i)) : 0.0;
  // Project onto principal axes and rescale each to unit variance.
  return centered * eig.eigenvectors() * inv_sqrt.asDiagonal();
}

}  // namespace

Matrix init_personalized_bank(Index patterns, Index width, std::uint64_t seed, BankInit strategy) {
  if (patterns < 1 || width < 1) throw std::invalid_argument("bank dimensions must be positive");
  Rng rng(seed);
  Matrix bank = draw(patterns, width, rng, strategy);
  if (strategy != BankInit::random_pca_whiten) return bank;
  if (patterns < 2) {
    log::warn("pca whitening needs at least 2 patterns; using unit-normalized random rows");
    for (Index i = 0; i < bank.rows(); ++i) bank.row(i).normalize();
    return bank;
  }
  return pca_whiten(bank);
}

Matrix init_global_bank(Index patterns, Index width, std::uint64_t seed, BankInit strategy) {
  if (patterns < 1 || width < 1) throw std::invalid_argument("bank dimensions must be positive");
  if (strategy == BankInit::random_pca_whiten) strategy = BankInit::xavier;
  Rng rng(seed);
  return draw(patterns, width, rng, strategy);
}

Var project_patterns(const Var& features, const Var& projector, Index nodes) {
  if (projector.cols() != nodes) throw std::invalid_argument("projector width must equal the client's node count");
  return ad::matmul(projector, ad::block_mean(features, nodes));
}

Var update_personalized_bank(const Var& current, const Matrix& old_bank, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("momentum must lie in [0, 1]");
  if (current.rows() != old_bank.rows() || current.cols() != old_bank.cols()) {
    throw std::invalid_argument("bank update: projected patterns and bank differ in shape");
  }
  Tape& tape = current.tape();
  return ad::add(ad::scale(current, alpha), tape.constant(old_bank * (1.0 - alpha)));
}

Var personalized_scores(const Var& features, const Var& bank, const ScoreNet& net) {
  if (bank.rows() < 1) throw std::invalid_argument("personalized bank is empty");
  return ad::pair_tanh_scores(ad::matmul(features, net.w_node), ad::matmul(bank, net.w_pattern), net.bias, net.v);
}

Var attend_with_scores(const Var& scores, const Var& bank) {
  return ad::matmul(ad::softmax_rows(scores), bank);
}

Var personalized_attend(const Var& features, const Var& bank, const ScoreNet& net) {
  return attend_with_scores(personalized_scores(features, bank, net), bank);
}

Var global_attention_weights(const Var& features, const Var& bank, const Var& query_weight, const Var& query_bias) {
  const Var query = ad::add_row(ad::matmul(features, query_weight), query_bias);
  return ad::softmax_rows(ad::matmul_nt(query, bank));
}

Var global_attend(const Var& features, const Var& bank, const Var& query_weight, const Var& query_bias) {
  return ad::matmul(global_attention_weights(features, bank, query_weight, query_bias), bank);
}

Var predict(const Var& features, const Var& refined, const Var& head_weight, const Var& head_bias) {
  return ad::add_row(ad::matmul(ad::add(features, refined), head_weight), head_bias);
}

Var fuse_predictions(const Var& global_prediction, const Var& personal_prediction) {
  return ad::add(global_prediction, personal_prediction);
}

void init_critic(ParamStore& store, const std::string& prefix, Index width, Index hidden, Rng& rng) {
  for (const char* head : {"mu", "logvar"}) {
    const std::string p = prefix + "." + head + ".";
    store.add(p + "w1", init::xavier_uniform(width, hidden, rng), Role::personal);
    store.add(p + "b1", Matrix::Zero(1, hidden), Role::personal);
    store.add(p + "w2", init::xavier_uniform(hidden, width, rng), Role::personal);
    store.add(p + "b2", Matrix::Zero(1, width), Role::personal);
  }
}

Critic bind_critic(Tape& tape, ParamStore& store, const std::string& prefix, bool frozen) {
  auto get = [&](const std::string& name) {
    Parameter& p = store.at(prefix + "." + name);
    return frozen ? tape.constant(p.value) : tape.bind(p);
  };
  return {get("mu.w1"),     get("mu.b1"),     get("mu.w2"),     get("mu.b2"),
          get("logvar.w1"), get("logvar.b1"), get("logvar.w2"), get("logvar.b2")};
}

CriticOutput critic_forward(const Var& refined_personal, const Critic& c) {
  const Var mu_hidden = ad::relu(ad::add_row(ad::matmul(refined_personal, c.mu_w1), c.mu_b1));
  const Var mean = ad::add_row(ad::matmul(mu_hidden, c.mu_w2), c.mu_b2);
  const Var lv_hidden = ad::relu(ad::add_row(ad::matmul(refined_personal, c.lv_w1), c.lv_b1));
  const Var log_variance = ad::tanh(ad::add_row(ad::matmul(lv_hidden, c.lv_w2), c.lv_b2));
  if (!log_variance.value().allFinite()) throw std::runtime_error("CLUB critic produced a non-finite log-variance");
  return {mean, log_variance};
}

namespace {

void check_pairs(const Var& s, const Var& d) {
  if (s.rows() != d.rows()) {
    throw std::invalid_argument("CLUB: batch sizes differ (" + std::to_string(s.rows()) + " vs " +
                                std::to_string(d.rows()) + ")");
  }
  if (s.rows() < 1) throw std::invalid_argument("CLUB: empty batch");
}

}  // namespace

Var club_log_likelihood(const Var& global_features, const Var& refined_personal, const Critic& critic) {
  check_pairs(global_features, refined_personal);
  const auto [mean, log_variance] = critic_forward(refined_personal, critic);
  if (mean.cols() != global_features.cols()) throw std::invalid_argument("CLUB: critic width differs from S width");
  const Var residual_sq = ad::square(ad::sub(global_features, mean));
  const Var scaled = ad::hadamard(residual_sq, ad::exp(ad::scale(log_variance, -1.0)));
  // -0.5 * (log 2pi + logvar + residual^2 / var), summed over width, averaged over rows.
  const Var per_entry = ad::add_scalar(ad::scale(ad::add(log_variance, scaled), -0.5),
                                       -0.5 * std::log(2.0 * std::numbers::pi));
  return ad::scale(ad::sum_all(per_entry), 1.0 / static_cast<double>(global_features.rows()));
}

Var club_mi_estimate(const Var& global_features, const Var& refined_personal, const Critic& critic) {
  check_pairs(global_features, refined_personal);
  Tape& tape = global_features.tape();
  if (global_features.rows() == 1) return tape.constant(Matrix::Zero(1, 1));
  const auto [mean, log_variance] = critic_forward(refined_personal, critic);
  const Var inv_var = ad::exp(ad::scale(log_variance, -1.0));
  // Positive pairs: (S_i - mu_i)^2.
  const Var positive_sq = ad::square(ad::sub(global_features, mean));
  // All pairs: mean_j (S_j - mu_i)^2 = E[S^2] - 2 mu_i E[S] + mu_i^2.
  const Var first_moment = ad::mean_rows(global_features);
  const Var second_moment = ad::mean_rows(ad::square(global_features));
  const Var all_pairs_sq =
      ad::add_row(ad::sub(ad::square(mean), ad::scale(ad::mul_row(mean, first_moment), 2.0)), second_moment);
  // log-variance and 2pi terms are identical in both and cancel.
  const Var gap = ad::hadamard(ad::sub(all_pairs_sq, positive_sq), inv_var);
  return ad::scale(ad::sum_all(gap), 0.5 / static_cast<double>(global_features.rows()));
}

Var total_loss(const Var& prediction, const Matrix& target, const Var& mi, double lambda) {
  const Var mae = ad::mean_abs_error(prediction, target);
  if (lambda == 0.0) return mae;
  return ad::add(mae, ad::scale(mi, lambda));
}

}  // namespace feddis::disentangle
