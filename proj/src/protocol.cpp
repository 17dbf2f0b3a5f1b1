#include "feddis/protocol.hpp"

#include "feddis/log.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace feddis::protocol {

Mode parse_mode(const std::string& name) {
  if (name == "feddis") return Mode::feddis;
  if (name == "fedavg") return Mode::fedavg;
  if (name == "fedprox") return Mode::fedprox;
  throw std::invalid_argument("unknown mode '" + name + "' (expected feddis, fedavg or fedprox)");
}

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::feddis: return "feddis";
    case Mode::fedavg: return "fedavg";
    case Mode::fedprox: return "fedprox";
  }
  return "unknown";
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

RowVector prototype_attention(const Matrix& node_embeddings, const Matrix& w_v, const Matrix& b_v, const Matrix& w) {
  if (node_embeddings.rows() < 1) throw std::invalid_argument("graph prototype needs at least one node");
  const Matrix projected = ((node_embeddings * w_v).rowwise() + b_v.row(0)).array().tanh().matrix();
  const Eigen::VectorXd scores = projected * w;
  const Eigen::VectorXd e = (scores.array() - scores.maxCoeff()).exp();
  return (e / e.sum()).transpose();
}

RowVector graph_prototype(const Matrix& node_embeddings, const Matrix& w_v, const Matrix& b_v, const Matrix& w) {
  return prototype_attention(node_embeddings, w_v, b_v, w) * node_embeddings;
}

std::vector<Matrix> collaborative_pattern_sharing(const std::vector<Matrix>& banks, Index top_k, double tau,
                                                  bool include_self,
                                                  std::vector<std::vector<std::vector<CpsSelection>>>* selections) {
  if (banks.size() < 2) throw std::invalid_argument("pattern sharing needs at least two clients");
  if (top_k < 1) throw std::invalid_argument("pattern sharing needs K >= 1");
  if (tau < -1.0 || tau > 1.0) throw std::invalid_argument("similarity threshold must lie in [-1, 1]");
  const Index patterns = banks[0].rows();
  const Index width = banks[0].cols();
  for (const auto& b : banks) {
    if (b.rows() != patterns || b.cols() != width) throw std::invalid_argument("global banks differ in shape");
  }

  std::vector<Matrix> out = banks;
  if (selections != nullptr) selections->assign(banks.size(), std::vector<std::vector<CpsSelection>>(patterns));
  std::vector<CpsSelection> candidates;
  for (std::size_t m = 0; m < banks.size(); ++m) {
    for (Index j = 0; j < patterns; ++j) {
      const RowVector query = banks[m].row(j);
      RowVector sum = RowVector::Zero(width);
      std::size_t count = 0;
      std::vector<CpsSelection> chosen;
      for (std::size_t n = 0; n < banks.size(); ++n) {
        if (n == m && !include_self) continue;
        candidates.clear();
        for (Index k = 0; k < patterns; ++k) {
          candidates.push_back({n, k, cosine_similarity(query, banks[n].row(k))});
        }
        const auto keep = std::min<std::size_t>(static_cast<std::size_t>(top_k), candidates.size());
        // Ties go to the lower pattern index so the selection is deterministic.
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                          [](const CpsSelection& a, const CpsSelection& b) {
                            return a.similarity > b.similarity || (a.similarity == b.similarity && a.pattern < b.pattern);
                          });
        for (std::size_t r = 0; r < keep; ++r) {
          if (candidates[r].similarity > tau) {
            sum += banks[n].row(candidates[r].pattern);
            ++count;
            chosen.push_back(candidates[r]);
          }
        }
      }
      if (count > 0) out[m].row(j) = sum / static_cast<double>(count);
      if (selections != nullptr) (*selections)[m][j] = std::move(chosen);
    }
  }
  return out;
}

Matrix fusion_weights(const std::vector<RowVector>& prototypes, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("fusion temperature must be positive");
  const auto m = static_cast<Index>(prototypes.size());
  Matrix weights(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      weights(i, j) = cosine_similarity(prototypes[static_cast<std::size_t>(i)], prototypes[static_cast<std::size_t>(j)]) /
                      epsilon;
    }
    const double top = weights.row(i).maxCoeff();
    weights.row(i) = (weights.row(i).array() - top).exp().matrix();
    weights.row(i) /= weights.row(i).sum();
  }
  return weights;
}

std::vector<TensorSet> mix_tensor_sets(const std::vector<TensorSet>& sets, const Matrix& weights) {
  const auto m = sets.size();
  if (m == 0) throw std::invalid_argument("nothing to aggregate");
  if (weights.rows() < 1 || weights.cols() != static_cast<Index>(m)) {
    throw std::invalid_argument("weight matrix does not match the number of parameter sets");
  }
  for (const auto& s : sets) {
    if (s.size() != sets[0].size()) throw std::invalid_argument("parameter sets differ in tensor names");
  }
  std::vector<TensorSet> out(static_cast<std::size_t>(weights.rows()));
  for (const auto& [name, first] : sets[0]) {
    for (std::size_t j = 0; j < m; ++j) {
      auto it = sets[j].find(name);
      if (it == sets[j].end()) throw std::invalid_argument("parameter set " + std::to_string(j) + " lacks '" + name + "'");
      if (it->second.rows() != first.rows() || it->second.cols() != first.cols()) {
        throw std::invalid_argument("tensor '" + name + "' differs in shape across clients");
      }
    }
    for (Index i = 0; i < weights.rows(); ++i) {
      Matrix acc = Matrix::Zero(first.rows(), first.cols());
      for (std::size_t j = 0; j < m; ++j) acc += weights(i, static_cast<Index>(j)) * sets[j].at(name);
      out[static_cast<std::size_t>(i)][name] = std::move(acc);
    }
  }
  return out;
}

std::vector<TensorSet> graph_attention_fusion(const std::vector<RowVector>& prototypes,
                                              const std::vector<TensorSet>& sets, double epsilon) {
  if (prototypes.size() != sets.size()) throw std::invalid_argument("one prototype per parameter set required");
  return mix_tensor_sets(sets, fusion_weights(prototypes, epsilon));
}

TensorSet fedavg_aggregate(const std::vector<TensorSet>& sets, const std::vector<double>& weights) {
  if (weights.size() != sets.size()) throw std::invalid_argument("one weight per parameter set required");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("aggregation weights must be non-negative");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("aggregation weights sum to zero");
  Matrix row(1, static_cast<Index>(weights.size()));
  for (std::size_t j = 0; j < weights.size(); ++j) row(0, static_cast<Index>(j)) = weights[j] / total;
  return mix_tensor_sets(sets, row)[0];
}

double fedprox_term(const TensorSet& local, const TensorSet& global, double mu) {
  if (mu < 0.0) throw std::invalid_argument("proximal weight must be non-negative");
  double sq = 0.0;
  for (const auto& [name, value] : local) {
    auto it = global.find(name);
    if (it == global.end()) throw std::invalid_argument("proximal reference lacks '" + name + "'");
    sq += (value - it->second).squaredNorm();
  }
  return 0.5 * mu * sq;
}

// ---- messages ---------------------------------------------------------------

std::string encode_update(const ClientUpdate& update) {
  archive::Archive a;
  a.meta = {{"kind", "client_update"}, {"client_id", update.client_id}, {"sample_count", update.sample_count}};
  for (const auto& [name, value] : update.shared) a.tensors.push_back({name, Role::shared, value});
  a.tensors.push_back({names::kGlobalBank, Role::bank, update.bank});
  a.tensors.push_back({kPrototypeTensor, Role::prototype, update.prototype});
  return archive::serialize(a);
}

ClientUpdate decode_update(std::string_view bytes) {
  const archive::Archive a = archive::deserialize(bytes);
  if (a.meta.value("kind", "") != "client_update") throw std::runtime_error("message is not a client update");
  ClientUpdate u;
  u.client_id = a.meta.at("client_id").get<std::size_t>();
  u.sample_count = a.meta.at("sample_count").get<std::size_t>();
  for (const auto& t : a.tensors) {
    if (t.role == Role::shared) {
      u.shared[t.name] = t.value;
    } else if (t.name == names::kGlobalBank) {
      u.bank = t.value;
    } else if (t.name == kPrototypeTensor) {
      u.prototype = t.value.row(0);
    } else {
      throw std::runtime_error("unexpected tensor '" + t.name + "' in client update");
    }
  }
  return u;
}

std::string encode_payload(const ServerPayload& payload) {
  archive::Archive a;
  a.meta = {{"kind", "server_payload"}, {"client_id", payload.client_id}};
  for (const auto& [name, value] : payload.shared) a.tensors.push_back({name, Role::shared, value});
  a.tensors.push_back({names::kGlobalBank, Role::bank, payload.bank});
  return archive::serialize(a);
}

ServerPayload decode_payload(std::string_view bytes) {
  const archive::Archive a = archive::deserialize(bytes);
  if (a.meta.value("kind", "") != "server_payload") throw std::runtime_error("message is not a server payload");
  ServerPayload p;
  p.client_id = a.meta.at("client_id").get<std::size_t>();
  for (const auto& t : a.tensors) {
    if (t.role == Role::shared) {
      p.shared[t.name] = t.value;
    } else if (t.name == names::kGlobalBank) {
      p.bank = t.value;
    } else {
      throw std::runtime_error("unexpected tensor '" + t.name + "' in server payload");
    }
  }
  return p;
}

namespace {

std::atomic<long>& check_counter() {
  static std::atomic<long> count{0};
  return count;
}

}  // namespace

void check_upload_privacy(std::string_view bytes, const PrivacyProbe& probe) {
  ++check_counter();
  const archive::Archive a = archive::deserialize(bytes);
  for (const auto& t : a.tensors) {
    if (probe.personal_names.count(t.name) != 0) {
      throw PrivacyViolation("upload contains personal tensor '" + t.name + "'");
    }
    const bool allowed = t.role == Role::shared || (t.role == Role::bank && t.name == names::kGlobalBank) ||
                         (t.role == Role::prototype && t.name == kPrototypeTensor);
    if (!allowed) throw PrivacyViolation("upload contains tensor '" + t.name + "' with role " + role_name(t.role));
  }
  for (const auto& fragment : probe.raw_fragments) {
    if (!fragment.empty() && bytes.find(fragment) != std::string_view::npos) {
      throw PrivacyViolation("upload contains raw window data");
    }
  }
}

long privacy_checks_performed() { return check_counter().load(); }

ClientUpdate transmit_upload(const ClientUpdate& update, const PrivacyProbe& probe) {
  const std::string bytes = encode_update(update);
  check_upload_privacy(bytes, probe);
  return decode_update(bytes);
}

ServerPayload transmit_payload(const ServerPayload& payload) { return decode_payload(encode_payload(payload)); }

// ---- server -----------------------------------------------------------------

ServerResult server_round(const std::vector<ClientUpdate>& updates, const ServerOptions& options,
                          std::size_t expected_clients) {
  if (updates.size() != expected_clients) {
    throw std::runtime_error("server round: " + std::to_string(updates.size()) + " of " +
                             std::to_string(expected_clients) + " clients reported");
  }
  // Index by client id so the result does not depend on arrival order.
  std::vector<const ClientUpdate*> by_id(expected_clients, nullptr);
  for (const auto& u : updates) {
    if (u.client_id >= expected_clients) throw std::runtime_error("server round: unknown client id");
    if (by_id[u.client_id] != nullptr) throw std::runtime_error("server round: duplicate client id");
    by_id[u.client_id] = &u;
  }
  const std::size_t m = expected_clients;
  std::vector<TensorSet> shared(m);
  std::vector<Matrix> banks(m);
  std::vector<RowVector> prototypes(m);
  std::vector<double> samples(m);
  for (std::size_t i = 0; i < m; ++i) {
    shared[i] = by_id[i]->shared;
    banks[i] = by_id[i]->bank;
    prototypes[i] = by_id[i]->prototype;
    samples[i] = static_cast<double>(by_id[i]->sample_count);
  }

  ServerResult result;
  const bool feddis = options.mode == Mode::feddis;
  const auto mi = static_cast<Index>(m);
  if (feddis && !options.ablation.no_gp) {
    result.fusion_weights = fusion_weights(prototypes, options.epsilon);
  } else if (feddis) {
    result.fusion_weights = Matrix::Constant(mi, mi, 1.0 / static_cast<double>(m));
  } else {
    const double total = std::accumulate(samples.begin(), samples.end(), 0.0);
    if (total <= 0.0) throw std::runtime_error("server round: no training samples reported");
    result.fusion_weights.resize(mi, mi);
    for (Index i = 0; i < mi; ++i) {
      for (Index j = 0; j < mi; ++j) result.fusion_weights(i, j) = samples[static_cast<std::size_t>(j)] / total;
    }
  }
  const std::vector<TensorSet> fused = mix_tensor_sets(shared, result.fusion_weights);

  std::vector<Matrix> new_banks;
  if (options.ablation.no_wu) {
    new_banks = banks;
  } else if (feddis && !options.ablation.no_cps && m >= 2) {
    new_banks = collaborative_pattern_sharing(banks, options.top_k, options.tau, options.cps_include_self);
    for (std::size_t i = 0; i < m; ++i) {
      for (Index j = 0; j < banks[i].rows(); ++j) {
        if (new_banks[i].row(j) != banks[i].row(j)) ++result.patterns_replaced;
      }
    }
  } else {
    Matrix mean = Matrix::Zero(banks[0].rows(), banks[0].cols());
    for (const auto& b : banks) mean += b;
    mean /= static_cast<double>(m);
    new_banks.assign(m, mean);
  }

  for (std::size_t i = 0; i < m; ++i) result.payloads.push_back({i, fused[i], new_banks[i]});
  return result;
}

// ---- client -----------------------------------------------------------------

namespace {

constexpr std::uint64_t kShuffleStream = 21;

bool uploads(Role role) { return role == Role::shared; }

}  // namespace

Client::Client(std::size_t id, const ModelConfig& model_config, data::SplitStreams streams, const TrainOptions& options,
               std::uint64_t shared_seed, std::uint64_t client_seed)
    : id_(id),
      model_(model_config, shared_seed, client_seed),
      streams_(std::move(streams)),
      options_(options),
      adam_(options.adam),
      critic_adam_(options.critic_adam),
      rng_(derive_seed(client_seed, kShuffleStream)) {
  if (options.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (options.local_epochs < 0) throw std::invalid_argument("local epochs must be non-negative");
  prox_reference_ = shared_tensors();
}

TensorSet Client::shared_tensors() const {
  TensorSet out;
  for (const auto& [name, entry] : model_.params().entries()) {
    if (uploads(entry.role)) out[name] = entry.param.value;
  }
  return out;
}

void Client::install(const ServerPayload& payload) {
  ParamStore& store = model_.params();
  for (const auto& [name, value] : payload.shared) {
    if (!store.contains(name) || store.role(name) != Role::shared) {
      throw std::runtime_error("payload carries '" + name + "', which is not a shared tensor");
    }
    Parameter& p = store.at(name);
    if (p.value.rows() != value.rows() || p.value.cols() != value.cols()) {
      throw std::runtime_error("payload tensor '" + name + "' has the wrong shape");
    }
    p.value = value;
  }
  Parameter& bank = store.at(names::kGlobalBank);
  if (bank.value.rows() != payload.bank.rows() || bank.value.cols() != payload.bank.cols()) {
    throw std::runtime_error("payload global bank has the wrong shape");
  }
  bank.value = payload.bank;
  prox_reference_ = payload.shared;
}

BatchStats Client::train_batch(const data::WindowBatch& batch) {
  ParamStore& store = model_.params();
  const bool decouple = options_.lambda != 0.0;
  store.zero_grad();

  ad::Tape tape;
  const DualBranchModel::Forward f = model_.forward(tape, batch, true);

  // Critic ascent on the conditional log-likelihood, branch features held fixed.
  if (decouple) {
    ad::Tape critic_tape;
    const auto critic = disentangle::bind_critic(critic_tape, store, names::kCriticPrefix, false);
    const ad::Var ll = disentangle::club_log_likelihood(critic_tape.constant(f.global_features.value()),
                                                        critic_tape.constant(f.personal_refined.value()), critic);
    critic_tape.backward(ad::scale(ll, -1.0));
    critic_adam_.step(model_.critic_parameters());
    store.zero_grad();
  }

  BatchStats stats;
  ad::Var mi;
  if (decouple) {
    const auto critic = disentangle::bind_critic(tape, store, names::kCriticPrefix, true);
    mi = disentangle::club_mi_estimate(f.global_features, f.personal_refined, critic);
    stats.mi = mi.scalar();
  }
  const ad::Var mae = ad::mean_abs_error(f.prediction, batch.targets);
  ad::Var loss = disentangle::total_loss(f.prediction, batch.targets, mi, options_.lambda);
  if (options_.mode == Mode::fedprox && options_.prox_mu > 0.0) {
    for (const auto& [name, ref] : prox_reference_) {
      const ad::Var diff = ad::sub(tape.bind(store.at(name)), tape.constant(ref));
      loss = ad::add(loss, ad::scale(ad::sum_all(ad::square(diff)), 0.5 * options_.prox_mu));
    }
  }
  stats.loss = loss.scalar();
  stats.mae = mae.scalar();
  if (!std::isfinite(stats.loss)) {
    throw std::runtime_error("client " + std::to_string(id_) + ": non-finite training loss");
  }
  tape.backward(loss);
  adam_.step(model_.main_parameters());
  model_.commit_personal_bank(f.updated_bank);
  return stats;
}

ClientUpdate Client::local_round(const std::optional<ServerPayload>& payload) {
  if (payload) install(*payload);
  last_round_ = {};
  const Index windows = streams_.train.size();
  std::vector<Index> order(static_cast<std::size_t>(windows));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index epoch = 0; epoch < options_.local_epochs; ++epoch) {
    if (options_.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
    }
    for (Index first = 0; first < windows; first += options_.batch_size) {
      const Index count = std::min(options_.batch_size, windows - first);
      const data::WindowBatch batch =
          streams_.train.gather(std::span<const Index>(order.data() + first, static_cast<std::size_t>(count)));
      const BatchStats s = train_batch(batch);
      last_round_.loss += s.loss;
      last_round_.mae += s.mae;
      last_round_.mi += s.mi;
      ++last_round_.batches;
    }
  }
  if (last_round_.batches > 0) {
    const auto n = static_cast<double>(last_round_.batches);
    last_round_.loss /= n;
    last_round_.mae /= n;
    last_round_.mi /= n;
  }
  return make_update();
}

RowVector Client::prototype() const {
  const ParamStore& s = model_.params();
  return graph_prototype(s.at(names::kGlobalEmbedding).value, s.at("prototype.w_v").value, s.at("prototype.b_v").value,
                         s.at("prototype.w").value);
}

ClientUpdate Client::make_update() const {
  ClientUpdate u;
  u.client_id = id_;
  u.shared = shared_tensors();
  u.bank = model_.params().at(names::kGlobalBank).value;
  u.prototype = prototype();
  u.sample_count = sample_count();
  return u;
}

PrivacyProbe Client::privacy_probe() const {
  PrivacyProbe probe;
  for (const auto& [name, entry] : model_.params().entries()) {
    if (entry.role != Role::shared && entry.role != Role::bank) probe.personal_names.insert(name);
  }
  const data::WindowStream& train = streams_.train;
  if (train.empty()) return probe;
  auto bytes = [](const std::vector<double>& v) {
    return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  const Matrix& raw = train.raw();
  const Index history = train.history();
  const data::NormStats& stats = train.stats();
  // A node's history and one time step across nodes, raw and normalized.
  std::vector<double> node_raw, node_norm, step_raw, step_norm;
  for (Index t = 0; t < history; ++t) {
    node_raw.push_back(raw(t, 0));
    node_norm.push_back((raw(t, 0) - stats.mean) / stats.std);
  }
  for (Index v = 0; v < raw.cols(); ++v) {
    step_raw.push_back(raw(0, v));
    step_norm.push_back((raw(0, v) - stats.mean) / stats.std);
  }
  probe.raw_fragments = {bytes(node_raw), bytes(node_norm)};
  if (raw.cols() >= 2) {
    probe.raw_fragments.push_back(bytes(step_raw));
    probe.raw_fragments.push_back(bytes(step_norm));
  }
  return probe;
}

Client::Evaluation Client::evaluate(const data::WindowStream& stream) {
  const Index windows = stream.size();
  const Index rows_per = stream.nodes();
  const Index width = model_.config().horizon * model_.config().input_dim;
  Evaluation e{Matrix(windows * rows_per, width), Matrix(windows * rows_per, width)};
  const data::NormStats& stats = stream.stats();
  for (Index first = 0; first < windows; first += options_.batch_size) {
    const Index count = std::min(options_.batch_size, windows - first);
    const data::WindowBatch batch = stream.range(first, count);
    const Matrix pred = model_.predict(batch);
    e.prediction.middleRows(first * rows_per, count * rows_per) = data::normalize(pred, stats, data::Direction::inverse);
    e.truth.middleRows(first * rows_per, count * rows_per) = batch.raw_targets;
  }
  return e;
}

}  // namespace feddis::protocol
