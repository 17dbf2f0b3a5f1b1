#pragma once

// Dataset ingestion, node partitioning, windowing, normalization and the
// synthetic heterogeneous-traffic generator.

#include "feddis/autograd.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace feddis::data {

/// Readings for every node over time: values is [steps x nodes].
struct TrafficSeries {
  Matrix values;
  int interval_minutes = 5;
  std::vector<std::string> node_ids;

  Index steps() const { return values.rows(); }
  Index nodes() const { return values.cols(); }
};

enum class SeriesFormat { matrix_binary, csv };

SeriesFormat parse_series_format(const std::string& name);
/// Guesses from the extension: ".csv" is csv, anything else matrix-binary.
SeriesFormat format_from_path(const std::filesystem::path& path);

/// Throws std::runtime_error with a diagnostic on shape mismatch,
/// unparseable values or non-finite entries.
TrafficSeries load_dataset(const std::filesystem::path& path, SeriesFormat format);
void save_dataset(const TrafficSeries& series, const std::filesystem::path& path, SeriesFormat format);

struct ClientPartition {
  std::size_t client_id = 0;
  std::vector<std::size_t> node_indices;
  Matrix local_series;  // [steps x |node_indices|]
};

enum class PartitionStrategy { contiguous_blocks, index_file };

/// Sizes of M contiguous blocks over n nodes; earlier blocks take the remainder.
std::vector<std::size_t> contiguous_block_sizes(std::size_t nodes, std::size_t clients);

std::vector<ClientPartition> partition_nodes(const TrafficSeries& series, std::size_t clients,
                                             PartitionStrategy strategy,
                                             const std::filesystem::path& index_file = {});

/// Builds partitions from an explicit assignment, validating disjointness and coverage.
std::vector<ClientPartition> partition_from_assignment(const TrafficSeries& series,
                                                       const std::vector<std::vector<std::size_t>>& assignment);

/// Index file: one line per client, "<client_id>: <node> <node> ...". Lines
/// starting with '#' are comments.
std::vector<std::vector<std::size_t>> read_partition_file(const std::filesystem::path& path);
void write_partition_file(const std::vector<std::vector<std::size_t>>& assignment,
                          const std::filesystem::path& path);

struct NormStats {
  double mean = 0.0;
  double std = 1.0;

  /// z-score statistics over every entry; rejects std < 1e-8.
  static NormStats fit(const Matrix& training_values);
};

enum class Direction { forward, inverse };

Matrix normalize(const Matrix& x, const NormStats& stats, Direction direction);

/// A batch of windows for one client. Rows of every matrix are ordered
/// (node, sample): row = node * batch + sample, so each node's samples are
/// contiguous and node mixing is one matrix product.
struct WindowBatch {
  Index batch = 0;
  Index nodes = 0;
  Index features = 1;
  std::vector<Matrix> inputs;  // history entries, each [(batch*nodes) x features], normalized
  Matrix targets;              // [(batch*nodes) x horizon*features], normalized
  Matrix raw_targets;          // same shape, data units

  Index rows() const { return batch * nodes; }
  Index history() const { return static_cast<Index>(inputs.size()); }
};

/// Stride-1 windows inside one temporal split.
class WindowStream {
 public:
  WindowStream() = default;
  WindowStream(Matrix raw, Index history, Index horizon);

  /// L - T - T' + 1 when positive, else 0.
  static Index window_count(Index length, Index history, Index horizon);

  Index size() const { return window_count(raw_.rows(), history_, horizon_); }
  bool empty() const { return size() == 0; }
  Index nodes() const { return raw_.cols(); }
  Index history() const { return history_; }
  Index horizon() const { return horizon_; }
  const Matrix& raw() const { return raw_; }
  const NormStats& stats() const { return stats_; }
  void set_stats(const NormStats& stats) { stats_ = stats; }

  /// Assembles the windows starting at the given offsets.
  WindowBatch gather(std::span<const Index> starts) const;
  /// Windows [first, first + count).
  WindowBatch range(Index first, Index count) const;

 private:
  Matrix raw_;
  Index history_ = 0;
  Index horizon_ = 0;
  NormStats stats_;
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct SplitStreams {
  WindowStream train;
  WindowStream validation;
  WindowStream test;
};

/// Splits the client's series in time and windows each split independently.
/// A split too short for one window yields an empty stream and a warning.
SplitStreams make_windows(const ClientPartition& partition, Index history, Index horizon,
                          const SplitFractions& splits = {});

/// Fits per-client statistics on the training split and attaches them to all three streams.
NormStats attach_normalization(SplitStreams& streams);

struct SyntheticConfig {
  std::size_t clients = 4;
  std::size_t nodes_per_client = 10;
  std::size_t steps = 2880;
  std::size_t prototypes = 3;
  double client_amplitude = 8.0;
  double noise_std = 1.0;
  std::size_t steps_per_day = 288;
  double base_level = 60.0;
  double prototype_swing = 15.0;
};

struct SyntheticDataset {
  TrafficSeries series;
  std::vector<std::vector<std::size_t>> partition;  // ground truth client -> nodes
  std::vector<double> ar_coefficients;              // one per client
};

/// Node series = shared daily prototype (round-robin) + client AR(1) process
/// scaled by client_amplitude + white observation noise.
SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace feddis::data
