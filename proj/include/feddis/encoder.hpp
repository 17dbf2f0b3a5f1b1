#pragma once

// Spatial-temporal feature extractor: adaptive adjacency, first-order graph
// convolution and the graph-convolutional GRU cell (AGR), stacked into an
// encoder that returns the top layer's final hidden state per node.

#include "feddis/autograd.hpp"
#include "feddis/params.hpp"

#include <string>
#include <vector>

namespace feddis::encoder {

using ad::Tape;
using ad::Var;

struct EncoderShape {
  Index input_dim = 1;
  Index hidden = 64;  // C
  Index embed = 10;   // d
  Index layers = 2;
};

/// Gate parameters of one AGR layer, bound to a tape.
struct AgrLayer {
  Var w_z, b_z;
  Var w_r, b_r;
  Var w_h, b_h;
};

/// Softmax(ReLU(E E^T)), each row a probability simplex.
Var adaptive_adjacency(const Var& embedding);

/// A X W + b. X may hold several samples in node-major order; A mixes nodes within a sample.
Var graph_conv(const Var& x, const Var& adjacency, const Var& weight, const Var& bias);

struct AgrGates {
  Var mixed;  // A [x_t || H_{t-1}]
  Var z;
  Var r;
};

/// Update and reset gates of one AGR step.
AgrGates agr_gates(const Var& x_t, const Var& h_prev, const Var& adjacency, const AgrLayer& layer);

/// One AGR step: z, r gates and candidate state over [x_t || H_{t-1}].
Var agr_cell_step(const Var& x_t, const Var& h_prev, const Var& adjacency, const AgrLayer& layer);

/// Runs the stacked cells over every history step; H starts at zero for each
/// window. Adjacency is computed once from the embedding.
Var encode_sequence(Tape& tape, const std::vector<Matrix>& window, const std::vector<AgrLayer>& layers,
                    const Var& embedding);

/// Adds "<prefix>.embedding" and "<prefix>.agr<l>.{w,b}_{z,r,h}" to the store.
void init_encoder(ParamStore& store, const std::string& prefix, const EncoderShape& shape, Index nodes, Rng& weight_rng,
                  Rng& embedding_rng, Role weight_role, Role embedding_role);

std::vector<AgrLayer> bind_layers(Tape& tape, ParamStore& store, const std::string& prefix, Index layers);

}  // namespace feddis::encoder
