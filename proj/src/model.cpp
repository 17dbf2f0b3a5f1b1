#include "feddis/model.hpp"

#include "feddis/random.hpp"

#include <stdexcept>

namespace feddis {

namespace {

// Sub-stream ids for derive_seed.
enum Stream : std::uint64_t {
  kGlobalWeights = 1,
  kGlobalBankSeed = 2,
  kPrototypeSeed = 3,
  kEmbeddings = 11,
  kPersonalWeights = 12,
  kPersonalBankSeed = 13,
  kCriticSeed = 14,
};

}  // namespace

DualBranchModel::DualBranchModel(const ModelConfig& config, std::uint64_t shared_seed, std::uint64_t client_seed)
    : config_(config) {
  if (config.nodes < 1 || config.hidden < 1 || config.embed < 1 || config.layers < 1 || config.horizon < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  const Index c = config.hidden;
  const Index out = config.horizon * config.input_dim;
  const encoder::EncoderShape shape{config.input_dim, c, config.embed, config.layers};

  Rng global_rng(derive_seed(shared_seed, kGlobalWeights));
  Rng embed_rng(derive_seed(client_seed, kEmbeddings));
  Rng personal_rng(derive_seed(client_seed, kPersonalWeights));

  encoder::init_encoder(params_, "global", shape, config.nodes, global_rng, embed_rng, Role::shared, Role::personal);
  params_.add("global.query.weight", init::xavier_uniform(c, c, global_rng), Role::shared);
  params_.add("global.query.bias", Matrix::Zero(1, c), Role::shared);
  params_.add("global.head.weight", init::xavier_uniform(c, out, global_rng), Role::shared);
  params_.add("global.head.bias", Matrix::Zero(1, out), Role::shared);
  params_.add(names::kGlobalBank,
              disentangle::init_global_bank(config.global_patterns, c, derive_seed(shared_seed, kGlobalBankSeed),
                                            config.global_init),
              Role::bank);

  encoder::init_encoder(params_, "personal", shape, config.nodes, personal_rng, embed_rng, Role::personal,
                        Role::personal);
  params_.add("personal.projector", init::xavier_uniform(config.personal_patterns, config.nodes, personal_rng),
              Role::personal);
  params_.add("personal.score.w_node", init::xavier_uniform(c, c, personal_rng), Role::personal);
  params_.add("personal.score.w_pattern", init::xavier_uniform(c, c, personal_rng), Role::personal);
  params_.add("personal.score.bias", Matrix::Zero(1, c), Role::personal);
  params_.add("personal.score.v", init::xavier_uniform(c, 1, personal_rng), Role::personal);
  params_.add("personal.head.weight", init::xavier_uniform(c, out, personal_rng), Role::personal);
  params_.add("personal.head.bias", Matrix::Zero(1, out), Role::personal);
  params_.add(names::kPersonalBank,
              disentangle::init_personalized_bank(config.personal_patterns, c,
                                                  derive_seed(client_seed, kPersonalBankSeed), config.personal_init),
              Role::state, false);

  Rng critic_rng(derive_seed(client_seed, kCriticSeed));
  disentangle::init_critic(params_, names::kCriticPrefix, c, config.critic_hidden > 0 ? config.critic_hidden : c,
                           critic_rng);

  // Prototype attention starts identical on every client and is never trained,
  // so prototypes from different clients are scored by the same function.
  Rng proto_rng(derive_seed(shared_seed, kPrototypeSeed));
  const Index att = config.prototype_hidden > 0 ? config.prototype_hidden : config.embed;
  params_.add("prototype.w_v", init::xavier_uniform(config.embed, att, proto_rng), Role::prototype, false);
  params_.add("prototype.b_v", Matrix::Zero(1, att), Role::prototype, false);
  params_.add("prototype.w", init::xavier_uniform(att, 1, proto_rng), Role::prototype, false);
}

ad::Var DualBranchModel::get(ad::Tape& tape, const std::string& name, bool train) {
  Parameter& p = params_.at(name);
  return train && params_.trainable(name) ? tape.bind(p) : tape.constant(p.value);
}

DualBranchModel::Forward DualBranchModel::forward(ad::Tape& tape, const data::WindowBatch& batch, bool train) {
  if (batch.nodes != config_.nodes) {
    throw std::invalid_argument("batch has " + std::to_string(batch.nodes) + " nodes, model expects " +
                                std::to_string(config_.nodes));
  }
  auto layers = [&](const std::string& prefix) {
    std::vector<encoder::AgrLayer> out;
    for (Index l = 0; l < config_.layers; ++l) {
      const std::string p = prefix + ".agr" + std::to_string(l) + ".";
      out.push_back({get(tape, p + "w_z", train), get(tape, p + "b_z", train), get(tape, p + "w_r", train),
                     get(tape, p + "b_r", train), get(tape, p + "w_h", train), get(tape, p + "b_h", train)});
    }
    return out;
  };

  Forward f;
  f.global_features =
      encoder::encode_sequence(tape, batch.inputs, layers("global"), get(tape, names::kGlobalEmbedding, train));
  f.personal_features =
      encoder::encode_sequence(tape, batch.inputs, layers("personal"), get(tape, "personal.embedding", train));

  const Matrix& old_bank = params_.at(names::kPersonalBank).value;
  if (config_.personalized_extractor) {
    ad::Var bank;
    if (train) {
      const ad::Var current =
          disentangle::project_patterns(f.personal_features, get(tape, "personal.projector", train), config_.nodes);
      bank = disentangle::update_personalized_bank(current, old_bank, config_.alpha);
      f.updated_bank = bank.value();
    } else {
      bank = tape.constant(old_bank);
      f.updated_bank = old_bank;
    }
    const disentangle::ScoreNet net{get(tape, "personal.score.w_node", train),
                                    get(tape, "personal.score.w_pattern", train),
                                    get(tape, "personal.score.bias", train), get(tape, "personal.score.v", train)};
    f.personal_refined = disentangle::personalized_attend(f.personal_features, bank, net);
  } else {
    f.personal_refined = tape.constant(Matrix::Zero(batch.rows(), config_.hidden));
    f.updated_bank = old_bank;
  }

  f.global_refined = disentangle::global_attend(f.global_features, get(tape, names::kGlobalBank, train),
                                                get(tape, "global.query.weight", train),
                                                get(tape, "global.query.bias", train));
  f.global_prediction = disentangle::predict(f.global_features, f.global_refined,
                                             get(tape, "global.head.weight", train),
                                             get(tape, "global.head.bias", train));
  f.personal_prediction = disentangle::predict(f.personal_features, f.personal_refined,
                                               get(tape, "personal.head.weight", train),
                                               get(tape, "personal.head.bias", train));
  f.prediction = disentangle::fuse_predictions(f.global_prediction, f.personal_prediction);
  return f;
}

Matrix DualBranchModel::predict(const data::WindowBatch& batch) {
  ad::Tape tape;
  return forward(tape, batch, false).prediction.value();
}

void DualBranchModel::commit_personal_bank(const Matrix& bank) {
  Parameter& p = params_.at(names::kPersonalBank);
  if (bank.rows() != p.value.rows() || bank.cols() != p.value.cols()) {
    throw std::invalid_argument("personalized bank shape changed");
  }
  p.value = bank;
}

std::vector<std::pair<std::string, Parameter*>> DualBranchModel::main_parameters() {
  auto all = params_.trainable_params();
  std::vector<std::pair<std::string, Parameter*>> out;
  const std::string critic = std::string(names::kCriticPrefix) + ".";
  for (auto& entry : all) {
    if (entry.first.rfind(critic, 0) != 0) out.push_back(entry);
  }
  return out;
}

std::vector<std::pair<std::string, Parameter*>> DualBranchModel::critic_parameters() {
  return params_.trainable_params({std::string(names::kCriticPrefix) + "."});
}

}  // namespace feddis
