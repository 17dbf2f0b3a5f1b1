#pragma once

// Dual-branch decoupling: personalized pattern bank with momentum update and
// MLP-scored attention, global pattern bank with projected-query attention,
// the two linear prediction heads, and the CLUB mutual-information bound.

#include "feddis/autograd.hpp"
#include "feddis/params.hpp"

#include <cstdint>
#include <string>

namespace feddis::disentangle {

using ad::Tape;
using ad::Var;

enum class BankInit { random, xavier, kaiming, random_pca_whiten };

BankInit parse_bank_init(const std::string& name);
const char* bank_init_name(BankInit init);

/// [patterns x width] personalized bank. random_pca_whiten draws N(0,1) and
/// whitens columns to zero mean and identity covariance (on the non-null
/// subspace when patterns <= width). With fewer than 2 patterns whitening is
/// undefined; rows are unit-normalized instead and a warning is logged.
Matrix init_personalized_bank(Index patterns, Index width, std::uint64_t seed, BankInit strategy);

/// [patterns x width] global bank; Xavier-uniform unless another strategy is requested.
Matrix init_global_bank(Index patterns, Index width, std::uint64_t seed, BankInit strategy);

/// Current patterns P(D): the learnable [B x |V|] projector applied over the
/// node axis of D, averaged over the samples stacked in D.
Var project_patterns(const Var& features, const Var& projector, Index nodes);

/// alpha * current + (1 - alpha) * old_bank.
Var update_personalized_bank(const Var& current, const Matrix& old_bank, double alpha);

/// One-hidden-layer scorer over concatenated (D_i, l_k):
/// s(i,k) = v^T tanh(W_node D_i + W_pattern l_k + b).
struct ScoreNet {
  Var w_node;     // [C x C]
  Var w_pattern;  // [C x C]
  Var bias;       // [1 x C]
  Var v;          // [C x 1]
};

Var personalized_scores(const Var& features, const Var& bank, const ScoreNet& net);
/// softmax over each score row, then weighted sum of bank rows.
Var attend_with_scores(const Var& scores, const Var& bank);
Var personalized_attend(const Var& features, const Var& bank, const ScoreNet& net);

/// Softmax((S W_s + b_s) W^T) W.
Var global_attention_weights(const Var& features, const Var& bank, const Var& query_weight, const Var& query_bias);
Var global_attend(const Var& features, const Var& bank, const Var& query_weight, const Var& query_bias);

/// Linear head applied to (features + refined).
Var predict(const Var& features, const Var& refined, const Var& head_weight, const Var& head_bias);
Var fuse_predictions(const Var& global_prediction, const Var& personal_prediction);

/// Variational conditional Gaussian q(S | D_hat): two MLP heads with one ReLU
/// hidden layer each; the log-variance head ends in tanh.
struct Critic {
  Var mu_w1, mu_b1, mu_w2, mu_b2;
  Var lv_w1, lv_b1, lv_w2, lv_b2;
};

struct CriticOutput {
  Var mean;
  Var log_variance;
};

void init_critic(ParamStore& store, const std::string& prefix, Index width, Index hidden, Rng& rng);
/// Binds the critic; when frozen its tensors enter the tape as constants.
Critic bind_critic(Tape& tape, ParamStore& store, const std::string& prefix, bool frozen);

CriticOutput critic_forward(const Var& refined_personal, const Critic& critic);

/// Mean over rows of log N(S_i; mu(D_hat_i), diag(sigma^2(D_hat_i))).
Var club_log_likelihood(const Var& global_features, const Var& refined_personal, const Critic& critic);

/// (1/U) sum_i [log q(S_i|D_i) - (1/U) sum_j log q(S_j|D_i)], evaluated in
/// O(U*C) through the first two column moments of S. Zero for U = 1.
Var club_mi_estimate(const Var& global_features, const Var& refined_personal, const Critic& critic);

/// MAE(prediction, target) + lambda * mi. mi is ignored when lambda == 0.
Var total_loss(const Var& prediction, const Matrix& target, const Var& mi, double lambda);

}  // namespace feddis::disentangle
