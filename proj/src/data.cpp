#include "feddis/data.hpp"

#include "feddis/log.hpp"
#include "feddis/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace feddis::data {

namespace fs = std::filesystem;

SeriesFormat parse_series_format(const std::string& name) {
  if (name == "matrix-binary" || name == "bin" || name == "binary") return SeriesFormat::matrix_binary;
  if (name == "csv") return SeriesFormat::csv;
  throw std::invalid_argument("unknown dataset format '" + name + "' (expected matrix-binary or csv)");
}

SeriesFormat format_from_path(const fs::path& path) {
  return path.extension() == ".csv" ? SeriesFormat::csv : SeriesFormat::matrix_binary;
}

namespace {

static_assert(std::endian::native == std::endian::little, "matrix-binary I/O assumes a little-endian host");

void check_finite(const Matrix& values, const fs::path& path) {
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      if (!std::isfinite(values(r, c))) {
        throw std::runtime_error(path.string() + ": non-finite value at row " + std::to_string(r) + ", column " +
                                 std::to_string(c));
      }
    }
  }
}

TrafficSeries load_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::uint32_t header[2] = {0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  const std::uint64_t steps = header[0];
  const std::uint64_t nodes = header[1];
  const std::uint64_t expected = steps * nodes * sizeof(float);
  const auto file_size = fs::file_size(path);
  if (file_size != expected + sizeof(header)) {
    throw std::runtime_error(path.string() + ": shape mismatch, header declares " + std::to_string(steps) + "x" +
                             std::to_string(nodes) + " (" + std::to_string(expected) + " payload bytes) but file has " +
                             std::to_string(file_size - sizeof(header)));
  }
  std::vector<float> buffer(static_cast<std::size_t>(steps * nodes));
  in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(expected));
  if (!in) throw std::runtime_error(path.string() + ": truncated payload");
  TrafficSeries series;
  series.values.resize(static_cast<Index>(steps), static_cast<Index>(nodes));
  for (std::size_t i = 0; i < buffer.size(); ++i) series.values.data()[i] = static_cast<double>(buffer[i]);
  for (std::uint64_t n = 0; n < nodes; ++n) series.node_ids.push_back(std::to_string(n));
  return series;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

TrafficSeries load_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header row");
  TrafficSeries series;
  series.node_ids = split_csv_line(line);
  if (series.node_ids.empty()) throw std::runtime_error(path.string() + ": header has no node ids");
  const std::size_t nodes = series.node_ids.size();
  std::vector<double> flat;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != nodes) {
      throw std::runtime_error(path.string() + ": shape mismatch on data row " + std::to_string(row) + ", expected " +
                               std::to_string(nodes) + " values, found " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < nodes; ++c) {
      const std::string& text = cells[c];
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (text.empty() || end != text.c_str() + text.size()) {
        throw std::runtime_error(path.string() + ": unparseable value '" + text + "' at data row " +
                                 std::to_string(row) + ", column " + std::to_string(c));
      }
      flat.push_back(v);
    }
    ++row;
  }
  series.values.resize(static_cast<Index>(row), static_cast<Index>(nodes));
  std::copy(flat.begin(), flat.end(), series.values.data());
  return series;
}

}  // namespace

TrafficSeries load_dataset(const fs::path& path, SeriesFormat format) {
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: " + path.string());
  TrafficSeries series = format == SeriesFormat::csv ? load_csv(path) : load_binary(path);
  if (series.nodes() < 1 || series.steps() < 1) throw std::runtime_error(path.string() + ": empty dataset");
  check_finite(series.values, path);
  series.interval_minutes = 5;
  return series;
}

void save_dataset(const TrafficSeries& series, const fs::path& path, SeriesFormat format) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (format == SeriesFormat::csv) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (Index c = 0; c < series.nodes(); ++c) {
      if (c) out << ',';
      out << (static_cast<std::size_t>(c) < series.node_ids.size() ? series.node_ids[static_cast<std::size_t>(c)]
                                                                     : std::to_string(c));
    }
    out << '\n';
    out.precision(9);
    for (Index r = 0; r < series.steps(); ++r) {
      for (Index c = 0; c < series.nodes(); ++c) {
        if (c) out << ',';
        out << series.values(r, c);
      }
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint32_t header[2] = {static_cast<std::uint32_t>(series.steps()),
                                   static_cast<std::uint32_t>(series.nodes())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> buffer(static_cast<std::size_t>(series.values.size()));
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = static_cast<float>(series.values.data()[i]);
  out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::size_t> contiguous_block_sizes(std::size_t nodes, std::size_t clients) {
  if (clients < 1 || clients > nodes) {
    throw std::invalid_argument("cannot split " + std::to_string(nodes) + " nodes into " + std::to_string(clients) +
                                " clients");
  }
  std::vector<std::size_t> sizes(clients, nodes / clients);
  for (std::size_t i = 0; i < nodes % clients; ++i) ++sizes[i];
  return sizes;
}

std::vector<ClientPartition> partition_from_assignment(const TrafficSeries& series,
                                                       const std::vector<std::vector<std::size_t>>& assignment) {
  const auto n = static_cast<std::size_t>(series.nodes());
  std::vector<int> owner(n, -1);
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    if (assignment[m].empty()) throw std::invalid_argument("client " + std::to_string(m) + " has no nodes");
    for (std::size_t node : assignment[m]) {
      if (node >= n) throw std::invalid_argument("node index " + std::to_string(node) + " out of range");
      if (owner[node] != -1) {
        throw std::invalid_argument("node " + std::to_string(node) + " assigned to both client " +
                                    std::to_string(owner[node]) + " and client " + std::to_string(m));
      }
      owner[node] = static_cast<int>(m);
    }
  }
  for (std::size_t node = 0; node < n; ++node) {
    if (owner[node] == -1) throw std::invalid_argument("node " + std::to_string(node) + " is not assigned to any client");
  }
  std::vector<ClientPartition> parts;
  parts.reserve(assignment.size());
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    ClientPartition p;
    p.client_id = m;
    p.node_indices = assignment[m];
    p.local_series.resize(series.steps(), static_cast<Index>(p.node_indices.size()));
    for (std::size_t j = 0; j < p.node_indices.size(); ++j) {
      p.local_series.col(static_cast<Index>(j)) = series.values.col(static_cast<Index>(p.node_indices[j]));
    }
    parts.push_back(std::move(p));
  }
  return parts;
}

std::vector<ClientPartition> partition_nodes(const TrafficSeries& series, std::size_t clients,
                                             PartitionStrategy strategy, const fs::path& index_file) {
  if (strategy == PartitionStrategy::index_file) {
    auto assignment = read_partition_file(index_file);
    if (assignment.size() != clients) {
      throw std::invalid_argument(index_file.string() + " defines " + std::to_string(assignment.size()) +
                                  " clients, expected " + std::to_string(clients));
    }
    return partition_from_assignment(series, assignment);
  }
  const auto sizes = contiguous_block_sizes(static_cast<std::size_t>(series.nodes()), clients);
  std::vector<std::vector<std::size_t>> assignment(clients);
  std::size_t next = 0;
  for (std::size_t m = 0; m < clients; ++m) {
    for (std::size_t k = 0; k < sizes[m]; ++k) assignment[m].push_back(next++);
  }
  return partition_from_assignment(series, assignment);
}

std::vector<std::vector<std::size_t>> read_partition_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open partition file " + path.string());
  std::vector<std::vector<std::size_t>> assignment;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected '<client>: <nodes...>'");
    }
    const std::size_t client = std::stoul(line.substr(0, colon));
    if (client >= assignment.size()) assignment.resize(client + 1);
    std::istringstream nodes(line.substr(colon + 1));
    std::string token;
    while (nodes >> token) assignment[client].push_back(std::stoul(token));
  }
  return assignment;
}

void write_partition_file(const std::vector<std::vector<std::size_t>>& assignment, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# client: node indices\n";
  for (std::size_t m = 0; m < assignment.size(); ++m) {
    out << m << ':';
    for (std::size_t node : assignment[m]) out << ' ' << node;
    out << '\n';
  }
}

NormStats NormStats::fit(const Matrix& training_values) {
  if (training_values.size() == 0) throw std::invalid_argument("cannot fit normalization on empty data");
  NormStats stats;
  const double n = static_cast<double>(training_values.size());
  stats.mean = training_values.sum() / n;
  stats.std = std::sqrt((training_values.array() - stats.mean).square().sum() / n);
  if (stats.std < 1e-8) {
    throw std::invalid_argument("normalization rejected: training std " + std::to_string(stats.std) + " below 1e-8");
  }
  return stats;
}

Matrix normalize(const Matrix& x, const NormStats& stats, Direction direction) {
  if (direction == Direction::forward) return ((x.array() - stats.mean) / stats.std).matrix();
  return (x.array() * stats.std + stats.mean).matrix();
}

WindowStream::WindowStream(Matrix raw, Index history, Index horizon)
    : raw_(std::move(raw)), history_(history), horizon_(horizon) {
  if (history < 1 || horizon < 1) throw std::invalid_argument("history and horizon must be positive");
}

Index WindowStream::window_count(Index length, Index history, Index horizon) {
  const Index count = length - history - horizon + 1;
  return count > 0 ? count : 0;
}

WindowBatch WindowStream::gather(std::span<const Index> starts) const {
  WindowBatch batch;
  batch.batch = static_cast<Index>(starts.size());
  batch.nodes = nodes();
  batch.features = 1;
  const Index rows = batch.rows();
  batch.inputs.assign(static_cast<std::size_t>(history_), Matrix(rows, 1));
  batch.targets.resize(rows, horizon_);
  batch.raw_targets.resize(rows, horizon_);
  const Index limit = size();
  for (Index b = 0; b < batch.batch; ++b) {
    const Index s = starts[static_cast<std::size_t>(b)];
    if (s < 0 || s >= limit) throw std::out_of_range("window start " + std::to_string(s) + " out of range");
    for (Index t = 0; t < history_; ++t) {
      Matrix& step = batch.inputs[static_cast<std::size_t>(t)];
      for (Index n = 0; n < batch.nodes; ++n) step(n * batch.batch + b, 0) = raw_(s + t, n);
    }
    for (Index h = 0; h < horizon_; ++h) {
      for (Index n = 0; n < batch.nodes; ++n) batch.raw_targets(n * batch.batch + b, h) = raw_(s + history_ + h, n);
    }
  }
  for (auto& step : batch.inputs) step = normalize(step, stats_, Direction::forward);
  batch.targets = normalize(batch.raw_targets, stats_, Direction::forward);
  return batch;
}

WindowBatch WindowStream::range(Index first, Index count) const {
  std::vector<Index> starts(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) starts[static_cast<std::size_t>(i)] = first + i;
  return gather(starts);
}

SplitStreams make_windows(const ClientPartition& partition, Index history, Index horizon,
                          const SplitFractions& splits) {
  const double total = splits.train + splits.validation + splits.test;
  if (std::abs(total - 1.0) > 1e-9 || splits.train < 0 || splits.validation < 0 || splits.test < 0) {
    throw std::invalid_argument("split fractions must be non-negative and sum to 1");
  }
  const Index steps = partition.local_series.rows();
  if (steps < history + horizon) {
    throw std::invalid_argument("series of " + std::to_string(steps) + " steps is shorter than one window (" +
                                std::to_string(history + horizon) + ")");
  }
  const auto train_len = static_cast<Index>(std::floor(splits.train * static_cast<double>(steps)));
  const auto val_len = static_cast<Index>(std::floor(splits.validation * static_cast<double>(steps)));
  const Index test_len = steps - train_len - val_len;
  SplitStreams streams{
      WindowStream(partition.local_series.topRows(train_len), history, horizon),
      WindowStream(partition.local_series.middleRows(train_len, val_len), history, horizon),
      WindowStream(partition.local_series.bottomRows(test_len), history, horizon),
  };
  const char* names[] = {"train", "validation", "test"};
  const WindowStream* all[] = {&streams.train, &streams.validation, &streams.test};
  for (int i = 0; i < 3; ++i) {
    if (all[i]->empty()) {
      log::warn("client " + std::to_string(partition.client_id) + ": " + names[i] + " split of " +
                std::to_string(all[i]->raw().rows()) + " steps is too short for one window");
    }
  }
  return streams;
}

NormStats attach_normalization(SplitStreams& streams) {
  const NormStats stats = NormStats::fit(streams.train.raw());
  streams.train.set_stats(stats);
  streams.validation.set_stats(stats);
  streams.test.set_stats(stats);
  return stats;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.clients < 1 || config.nodes_per_client < 1 || config.steps < 1 || config.prototypes < 1 ||
      config.steps_per_day < 1) {
    throw std::invalid_argument("synthetic config dimensions must be positive");
  }
  if (config.client_amplitude < 0 || config.noise_std < 0) {
    throw std::invalid_argument("synthetic amplitudes must be non-negative");
  }
  Rng proto_rng(derive_seed(seed, 0));
  struct Prototype {
    double level, swing, phase, harmonic;
  };
  std::vector<Prototype> protos;
  for (std::size_t p = 0; p < config.prototypes; ++p) {
    protos.push_back({config.base_level + proto_rng.uniform(-10.0, 10.0),
                      config.prototype_swing * proto_rng.uniform(0.6, 1.4),
                      proto_rng.uniform(0.0, 2.0 * std::numbers::pi), proto_rng.uniform(0.1, 0.4)});
  }

  SyntheticDataset out;
  const std::size_t nodes = config.clients * config.nodes_per_client;
  out.series.values.resize(static_cast<Index>(config.steps), static_cast<Index>(nodes));
  out.series.interval_minutes = 5;
  for (std::size_t n = 0; n < nodes; ++n) out.series.node_ids.push_back(std::to_string(n));

  const double day = static_cast<double>(config.steps_per_day);
  for (std::size_t m = 0; m < config.clients; ++m) {
    const double phi =
        config.clients == 1 ? 0.6 : 0.2 + 0.75 * static_cast<double>(m) / static_cast<double>(config.clients - 1);
    out.ar_coefficients.push_back(phi);
    const double innovation = std::sqrt(1.0 - phi * phi);
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < config.nodes_per_client; ++k) {
      const std::size_t node = m * config.nodes_per_client + k;
      members.push_back(node);
      const Prototype& proto = protos[node % config.prototypes];
      Rng rng(derive_seed(seed, 1 + node));
      double ar = rng.normal();
      for (std::size_t t = 0; t < config.steps; ++t) {
        if (t > 0) ar = phi * ar + innovation * rng.normal();
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(t) / day + proto.phase;
        const double shared =
            proto.level + proto.swing * (std::sin(angle) + proto.harmonic * std::sin(2.0 * angle + proto.phase));
        const double noise = config.noise_std > 0 ? config.noise_std * rng.normal() : 0.0;
        out.series.values(static_cast<Index>(t), static_cast<Index>(node)) =
            shared + config.client_amplitude * ar + noise;
      }
    }
    out.partition.push_back(std::move(members));
  }
  return out;
}

}  // namespace feddis::data
