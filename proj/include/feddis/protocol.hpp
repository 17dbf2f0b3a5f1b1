#pragma once

// Round-synchronous federation: client local training, the upload/download
// messages and their privacy check, server-side pattern sharing and
// prototype-guided fusion, and the FedAvg/FedProx aggregators.

#include "feddis/archive.hpp"
#include "feddis/data.hpp"
#include "feddis/model.hpp"
#include "feddis/optim.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace feddis::protocol {

using TensorSet = std::map<std::string, Matrix>;

enum class Mode { feddis, fedavg, fedprox };
Mode parse_mode(const std::string& name);
const char* mode_name(Mode mode);

struct AblationFlags {
  bool no_cd = false;   // no disentanglement: lambda = 0, D_hat = 0
  bool no_gp = false;   // uniform FedAvg instead of prototype-guided fusion
  bool no_wu = false;   // global bank never leaves the client
  bool no_cps = false;  // banks averaged elementwise instead of pattern sharing
};

// ---- server-side algorithms -------------------------------------------------

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(const RowVector& a, const RowVector& b);

/// Attention weights over nodes: softmax_v(w^T tanh(W_v^T h_v + b_v)).
/// Rows of node_embeddings are h_v. Returns [1 x |V|].
RowVector prototype_attention(const Matrix& node_embeddings, const Matrix& w_v, const Matrix& b_v, const Matrix& w);
RowVector graph_prototype(const Matrix& node_embeddings, const Matrix& w_v, const Matrix& b_v, const Matrix& w);

struct CpsSelection {
  std::size_t client = 0;
  Index pattern = 0;
  double similarity = 0.0;
};

/// For every client m and pattern j: the top-K most similar patterns of each
/// other client, kept when similarity > tau; the pattern becomes their mean.
/// An empty selection leaves it unchanged. Uses only the input snapshot.
std::vector<Matrix> collaborative_pattern_sharing(const std::vector<Matrix>& banks, Index top_k, double tau,
                                                  bool include_self = false,
                                                  std::vector<std::vector<std::vector<CpsSelection>>>* selections =
                                                      nullptr);

/// [M x M]; row i = softmax_j(cos(h_i, h_j) / epsilon).
Matrix fusion_weights(const std::vector<RowVector>& prototypes, double epsilon);

/// Row i of weights mixes all sets into fused set i.
std::vector<TensorSet> mix_tensor_sets(const std::vector<TensorSet>& sets, const Matrix& weights);

std::vector<TensorSet> graph_attention_fusion(const std::vector<RowVector>& prototypes,
                                              const std::vector<TensorSet>& sets, double epsilon);

TensorSet fedavg_aggregate(const std::vector<TensorSet>& sets, const std::vector<double>& weights);

/// (mu / 2) * sum over tensors of ||local - global||^2.
double fedprox_term(const TensorSet& local, const TensorSet& global, double mu);

// ---- messages ---------------------------------------------------------------

inline constexpr const char* kPrototypeTensor = "graph_prototype";

struct ClientUpdate {
  std::size_t client_id = 0;
  TensorSet shared;     // role shared
  Matrix bank;          // global bank W
  RowVector prototype;  // h_G
  std::size_t sample_count = 0;
};

struct ServerPayload {
  std::size_t client_id = 0;
  TensorSet shared;
  Matrix bank;
};

std::string encode_update(const ClientUpdate& update);
ClientUpdate decode_update(std::string_view bytes);
std::string encode_payload(const ServerPayload& payload);
ServerPayload decode_payload(std::string_view bytes);

/// What must never appear in a client's upload.
struct PrivacyProbe {
  std::set<std::string> personal_names;
  /// Byte strings of raw and normalized window fragments.
  std::vector<std::string> raw_fragments;
};

/// Throws PrivacyViolation when the serialized upload names a personal tensor,
/// carries a non-upload role, or contains a probe fragment.
struct PrivacyViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
void check_upload_privacy(std::string_view bytes, const PrivacyProbe& probe);
/// Number of upload checks run in this process.
long privacy_checks_performed();

/// In-process transport: every message is serialized, the upload is
/// privacy-checked on the wire bytes, then decoded on the other side.
ClientUpdate transmit_upload(const ClientUpdate& update, const PrivacyProbe& probe);
ServerPayload transmit_payload(const ServerPayload& payload);

// ---- server -----------------------------------------------------------------

struct ServerOptions {
  Mode mode = Mode::feddis;
  Index top_k = 3;
  double tau = 0.3;
  double epsilon = 0.3;
  bool cps_include_self = false;
  AblationFlags ablation;
};

struct ServerResult {
  std::vector<ServerPayload> payloads;
  Matrix fusion_weights;          // [M x M] weights applied to shared tensors
  std::size_t patterns_replaced = 0;
};

/// Requires exactly one update from each client 0..expected_clients-1.
ServerResult server_round(const std::vector<ClientUpdate>& updates, const ServerOptions& options,
                          std::size_t expected_clients);

// ---- client -----------------------------------------------------------------

struct TrainOptions {
  AdamOptions adam;
  AdamOptions critic_adam;
  double lambda = 0.1;
  Index batch_size = 64;
  Index local_epochs = 1;
  Mode mode = Mode::feddis;
  double prox_mu = 0.01;
  bool shuffle = true;
};

struct BatchStats {
  double loss = 0.0;
  double mae = 0.0;  // normalized units
  double mi = 0.0;
};

struct RoundStats {
  double loss = 0.0;  // mean over batches
  double mae = 0.0;
  double mi = 0.0;
  Index batches = 0;
};

class Client {
 public:
  Client(std::size_t id, const ModelConfig& model_config, data::SplitStreams streams, const TrainOptions& options,
         std::uint64_t shared_seed, std::uint64_t client_seed);

  std::size_t id() const { return id_; }
  DualBranchModel& model() { return model_; }
  const data::SplitStreams& streams() const { return streams_; }
  const TrainOptions& options() const { return options_; }
  std::size_t sample_count() const { return static_cast<std::size_t>(streams_.train.size()); }

  /// Overwrites shared tensors and the global bank with the server's values.
  void install(const ServerPayload& payload);

  /// Critic ascent then main descent on one batch; commits the bank update.
  BatchStats train_batch(const data::WindowBatch& batch);

  /// Installs the payload if given, trains local_epochs over the training
  /// windows, then builds the upload.
  ClientUpdate local_round(const std::optional<ServerPayload>& payload);
  const RoundStats& last_round() const { return last_round_; }

  ClientUpdate make_update() const;
  TensorSet shared_tensors() const;
  RowVector prototype() const;
  PrivacyProbe privacy_probe() const;

  /// Predictions and ground truth for every window of a stream, in data units.
  struct Evaluation {
    Matrix prediction;
    Matrix truth;
  };
  Evaluation evaluate(const data::WindowStream& stream);

 private:
  std::size_t id_;
  DualBranchModel model_;
  data::SplitStreams streams_;
  TrainOptions options_;
  Adam adam_;
  Adam critic_adam_;
  Rng rng_;
  TensorSet prox_reference_;
  RoundStats last_round_;
};

}  // namespace feddis::protocol
