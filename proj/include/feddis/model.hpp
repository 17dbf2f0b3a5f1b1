#pragma once

// One client's dual-branch forecaster. The global branch (encoder S, global
// bank W, query projection, head) holds the tensors that federate; the
// personalized branch (encoder D, personalized bank L, projector, scorer,
// head) and the CLUB critic stay on the client.

#include "feddis/autograd.hpp"
#include "feddis/data.hpp"
#include "feddis/disentangle.hpp"
#include "feddis/encoder.hpp"
#include "feddis/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace feddis {

struct ModelConfig {
  Index nodes = 1;
  Index input_dim = 1;
  Index hidden = 64;           // C
  Index embed = 10;            // d
  Index layers = 2;
  Index horizon = 12;          // T'
  Index personal_patterns = 64;  // B
  Index global_patterns = 16;    // O
  Index critic_hidden = 0;       // 0 -> hidden
  Index prototype_hidden = 0;    // 0 -> embed
  double alpha = 0.5;
  disentangle::BankInit personal_init = disentangle::BankInit::random_pca_whiten;
  disentangle::BankInit global_init = disentangle::BankInit::xavier;
  /// When false the personalized pattern extractor is removed (D_hat = 0).
  bool personalized_extractor = true;
};

namespace names {
inline constexpr const char* kGlobalBank = "global.bank";
inline constexpr const char* kGlobalEmbedding = "global.embedding";
inline constexpr const char* kPersonalBank = "personal.bank";
inline constexpr const char* kCriticPrefix = "critic";
}  // namespace names

class DualBranchModel {
 public:
  /// Tensors that federate (shared weights, global bank, prototype attention)
  /// are drawn from shared_seed so every client starts from the same point;
  /// everything else is drawn from client_seed.
  DualBranchModel(const ModelConfig& config, std::uint64_t shared_seed, std::uint64_t client_seed);

  struct Forward {
    ad::Var global_features;      // S
    ad::Var personal_features;    // D
    ad::Var global_refined;       // S_hat
    ad::Var personal_refined;     // D_hat
    ad::Var global_prediction;    // Y^U
    ad::Var personal_prediction;  // Y^P
    ad::Var prediction;           // Y = Y^U + Y^P
    Matrix updated_bank;          // L after the momentum step (train) or L unchanged (eval)
  };

  /// Builds the forward graph. With train = true all learnable tensors are
  /// bound for gradients and the personalized bank takes a momentum step
  /// before retrieval; the bank state itself is not committed here.
  Forward forward(ad::Tape& tape, const data::WindowBatch& batch, bool train);

  /// Prediction only, no graph retained beyond the call.
  Matrix predict(const data::WindowBatch& batch);

  void commit_personal_bank(const Matrix& bank);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return config_; }

  /// Names the main optimizer updates: everything trainable except the critic.
  std::vector<std::pair<std::string, Parameter*>> main_parameters();
  std::vector<std::pair<std::string, Parameter*>> critic_parameters();

 private:
  ad::Var get(ad::Tape& tape, const std::string& name, bool train);

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace feddis
