#include "feddis/encoder.hpp"

#include <stdexcept>

namespace feddis::encoder {

Var adaptive_adjacency(const Var& embedding) {
  if (embedding.rows() < 1) throw std::invalid_argument("adaptive_adjacency: need at least one node");
  return ad::softmax_rows(ad::relu(ad::matmul_nt(embedding, embedding)));
}

Var graph_conv(const Var& x, const Var& adjacency, const Var& weight, const Var& bias) {
  if (x.cols() != weight.rows()) {
    throw std::invalid_argument("graph_conv: input width " + std::to_string(x.cols()) + " does not match weight rows " +
                                std::to_string(weight.rows()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) throw std::invalid_argument("graph_conv: bias shape mismatch");
  return ad::add_row(ad::matmul(ad::block_left_mul(adjacency, x), weight), bias);
}

AgrGates agr_gates(const Var& x_t, const Var& h_prev, const Var& adjacency, const AgrLayer& layer) {
  // A [x || H] is shared by the update and reset gates.
  AgrGates g;
  g.mixed = ad::block_left_mul(adjacency, ad::concat_cols(x_t, h_prev));
  g.z = ad::sigmoid(ad::add_row(ad::matmul(g.mixed, layer.w_z), layer.b_z));
  g.r = ad::sigmoid(ad::add_row(ad::matmul(g.mixed, layer.w_r), layer.b_r));
  return g;
}

Var agr_cell_step(const Var& x_t, const Var& h_prev, const Var& adjacency, const AgrLayer& layer) {
  const AgrGates g = agr_gates(x_t, h_prev, adjacency, layer);
  const Var candidate =
      ad::tanh(graph_conv(ad::concat_cols(x_t, ad::hadamard(g.r, h_prev)), adjacency, layer.w_h, layer.b_h));
  return ad::add(ad::hadamard(g.z, h_prev), ad::hadamard(ad::one_minus(g.z), candidate));
}

Var encode_sequence(Tape& tape, const std::vector<Matrix>& window, const std::vector<AgrLayer>& layers,
                    const Var& embedding) {
  if (window.empty()) throw std::invalid_argument("encode_sequence: empty history window");
  if (layers.empty()) throw std::invalid_argument("encode_sequence: no layers");
  const Var adjacency = adaptive_adjacency(embedding);
  const Index rows = window.front().rows();
  std::vector<Var> hidden;
  hidden.reserve(layers.size());
  for (const auto& layer : layers) hidden.push_back(tape.constant(Matrix::Zero(rows, layer.b_z.cols())));
  for (const auto& step : window) {
    Var input = tape.constant(step);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      hidden[l] = agr_cell_step(input, hidden[l], adjacency, layers[l]);
      input = hidden[l];
    }
  }
  return hidden.back();
}

void init_encoder(ParamStore& store, const std::string& prefix, const EncoderShape& shape, Index nodes, Rng& weight_rng,
                  Rng& embedding_rng, Role weight_role, Role embedding_role) {
  store.add(prefix + ".embedding", init::standard_normal(nodes, shape.embed, embedding_rng), embedding_role);
  for (Index l = 0; l < shape.layers; ++l) {
    const Index in = (l == 0 ? shape.input_dim : shape.hidden) + shape.hidden;
    const std::string p = prefix + ".agr" + std::to_string(l) + ".";
    for (const char* gate : {"z", "r", "h"}) {
      store.add(p + "w_" + gate, init::xavier_uniform(in, shape.hidden, weight_rng), weight_role);
      store.add(p + "b_" + gate, Matrix::Zero(1, shape.hidden), weight_role);
    }
  }
}

std::vector<AgrLayer> bind_layers(Tape& tape, ParamStore& store, const std::string& prefix, Index layers) {
  std::vector<AgrLayer> out;
  for (Index l = 0; l < layers; ++l) {
    const std::string p = prefix + ".agr" + std::to_string(l) + ".";
    out.push_back({tape.bind(store.at(p + "w_z")), tape.bind(store.at(p + "b_z")), tape.bind(store.at(p + "w_r")),
                   tape.bind(store.at(p + "b_r")), tape.bind(store.at(p + "w_h")), tape.bind(store.at(p + "b_h"))});
  }
  return out;
}

}  // namespace feddis::encoder
