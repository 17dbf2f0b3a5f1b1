#pragma once

// Small deterministic inputs shared by the unit tests and the acceptance binary.

#include "feddis/data.hpp"
#include "feddis/model.hpp"
#include "feddis/protocol.hpp"
#include "feddis/random.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace feddis::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Smooth positive series with per-node offsets, [steps x nodes].
inline Matrix toy_series(Index steps, Index nodes, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(steps, nodes);
  for (Index n = 0; n < nodes; ++n) {
    const double level = 40.0 + 10.0 * rng.uniform();
    const double phase = 6.28 * rng.uniform();
    for (Index t = 0; t < steps; ++t) m(t, n) = level + 8.0 * std::sin(0.3 * t + phase) + rng.normal();
  }
  return m;
}

inline data::SplitStreams toy_streams(Index steps, Index nodes, Index history, Index horizon, std::uint64_t seed) {
  data::ClientPartition part;
  part.local_series = toy_series(steps, nodes, seed);
  for (Index n = 0; n < nodes; ++n) part.node_indices.push_back(static_cast<std::size_t>(n));
  auto streams = data::make_windows(part, history, horizon);
  data::attach_normalization(streams);
  return streams;
}

inline ModelConfig tiny_model(Index nodes) {
  ModelConfig c;
  c.nodes = nodes;
  c.hidden = 4;
  c.embed = 3;
  c.layers = 2;
  c.horizon = 2;
  c.personal_patterns = 3;
  c.global_patterns = 3;
  return c;
}

/// Desk-scale dimensions used by the gradient checks: |V|=4, T=3, C=8, B=4, O=4.
inline ModelConfig desk_model() {
  ModelConfig c;
  c.nodes = 4;
  c.hidden = 8;
  c.embed = 3;
  c.layers = 2;
  c.horizon = 2;
  c.personal_patterns = 4;
  c.global_patterns = 4;
  return c;
}

}  // namespace feddis::testing
