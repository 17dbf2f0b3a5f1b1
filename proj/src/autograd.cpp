#include "feddis/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace feddis::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non-scalar value");
  return v(0, 0);
}

bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::bind(Parameter& param) {
  Var v = leaf(param.value);
  nodes_.back().param = &param;
  return v;
}

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& target, const Matrix& grad) { accumulate_expr(target, grad); }

void Tape::backward(const Var& out) {
  if (out.rows() != 1 || out.cols() != 1) throw std::logic_error("backward() needs a scalar output");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(out.id())].grad = Matrix::Ones(1, 1);
  for (std::size_t i = static_cast<std::size_t>(out.id()) + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      if (node.param->grad.rows() != node.grad.rows() || node.param->grad.cols() != node.grad.cols()) {
        node.param->grad = node.grad;
      } else {
        node.param->grad += node.grad;
      }
    }
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

Tape& tape_of(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape& tp, const Matrix& g) {
    if (a.needs_grad()) tp.accumulate_expr(a, g * b.value().transpose());
    if (b.needs_grad()) tp.accumulate_expr(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.cols(), "matmul_nt: column counts differ");
  Matrix out = a.value() * b.value().transpose();
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape& tp, const Matrix& g) {
    if (a.needs_grad()) tp.accumulate_expr(a, g * b.value());
    if (b.needs_grad()) tp.accumulate_expr(b, g.transpose() * a.value());
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return a.tape().record(std::move(out), a.needs_grad(),
                         [a](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate_expr(b, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b](Tape& tp, const Matrix& g) {
    if (a.needs_grad()) tp.accumulate_expr(a, g.cwiseProduct(b.value()));
    if (b.needs_grad()) tp.accumulate_expr(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value() * s;
  return a.tape().record(std::move(out), a.needs_grad(),
                         [a, s](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, g * s); });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value().array() + s;
  return a.tape().record(std::move(out), a.needs_grad(), [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var one_minus(const Var& a) {
  Matrix out = 1.0 - a.value().array();
  return a.tape().record(std::move(out), a.needs_grad(),
                         [a](Tape& tp, const Matrix& g) { tp.accumulate_expr(a, -g); });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be [1 x cols]");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), a.needs_grad() || row.needs_grad(), [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (row.needs_grad()) tp.accumulate_expr(row, g.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be [1 x cols]");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.record(std::move(out), a.needs_grad() || row.needs_grad(), [a, row](Tape& tp, const Matrix& g) {
    if (a.needs_grad()) {
      Matrix ga = g.array().rowwise() * row.value().row(0).array();
      tp.accumulate(a, ga);
    }
    if (row.needs_grad()) tp.accumulate_expr(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Matrix tanh_values(const Matrix& x) {
  // Eigen's double tanh is scalar; this form vectorizes through exp.
  return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Tape& t = a.tape();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), a.needs_grad(), [a, out_id](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out_id);
    tp.accumulate_expr(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var tanh(const Var& a) {
  Matrix out = tanh_values(a.value());
  Tape& t = a.tape();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), a.needs_grad(), [a, out_id](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out_id);
    tp.accumulate_expr(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), a.needs_grad(), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  Tape& t = a.tape();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), a.needs_grad(), [a, out_id](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, g.cwiseProduct(tp.value(out_id)));
  });
}

Var square(const Var& a) {
  Matrix out = a.value().array().square().matrix();
  return a.tape().record(std::move(out), a.needs_grad(), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  Tape& t = a.tape();
  const int out_id = static_cast<int>(t.size());
  return t.record(std::move(out), a.needs_grad(), [a, out_id](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out_id);
    Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = y.array() * (g.colwise() - dots).array();
    tp.accumulate(a, ga);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows(), "concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const Index ac = a.cols();
  const Index bc = b.cols();
  return t.record(std::move(out), a.needs_grad() || b.needs_grad(), [a, b, ac, bc](Tape& tp, const Matrix& g) {
    if (a.needs_grad()) tp.accumulate_expr(a, g.leftCols(ac));
    if (b.needs_grad()) tp.accumulate_expr(b, g.rightCols(bc));
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), a.needs_grad(), [a, start, count](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = g;
    tp.accumulate(a, ga);
  });
}

Var block_left_mul(const Var& m, const Var& x) {
  Tape& t = tape_of(m, x);
  const Index n = m.rows();
  require(m.cols() == n, "block_left_mul: mixing matrix must be square");
  require(n > 0 && x.rows() % n == 0, "block_left_mul: rows not a multiple of block size");
  // Node-major rows make X an [n x (samples * cols)] matrix in place.
  const Index width = x.rows() / n * x.cols();
  using Map = Eigen::Map<const Matrix>;
  Matrix out(x.rows(), x.cols());
  Eigen::Map<Matrix>(out.data(), n, width).noalias() = m.value() * Map(x.value().data(), n, width);
  return t.record(std::move(out), m.needs_grad() || x.needs_grad(), [m, x, n, width](Tape& tp, const Matrix& g) {
    const Map gv(g.data(), n, width);
    if (x.needs_grad()) {
      Matrix gx(x.rows(), x.cols());
      Eigen::Map<Matrix>(gx.data(), n, width).noalias() = m.value().transpose() * gv;
      tp.accumulate(x, gx);
    }
    if (m.needs_grad()) {
      Matrix gm = gv * Map(x.value().data(), n, width).transpose();
      tp.accumulate(m, gm);
    }
  });
}

Var block_mean(const Var& x, Index nodes) {
  require(nodes > 0 && x.rows() % nodes == 0, "block_mean: rows not a multiple of the node count");
  const Index samples = x.rows() / nodes;
  Matrix out(nodes, x.cols());
  for (Index i = 0; i < nodes; ++i) out.row(i) = x.value().middleRows(i * samples, samples).colwise().mean();
  return x.tape().record(std::move(out), x.needs_grad(), [x, nodes, samples](Tape& tp, const Matrix& g) {
    Matrix gx(x.rows(), x.cols());
    for (Index i = 0; i < nodes; ++i) {
      gx.middleRows(i * samples, samples) = (g.row(i) / static_cast<double>(samples)).replicate(samples, 1);
    }
    tp.accumulate(x, gx);
  });
}

Var sum_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), a.needs_grad(), [a](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_all(const Var& a) {
  require(a.value().size() > 0, "mean_all: empty input");
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape().record(std::move(out), a.needs_grad(), [a, n](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var sum_cols(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape().record(std::move(out), a.needs_grad(), [a](Tape& tp, const Matrix& g) {
    Matrix ga = g.col(0).replicate(1, a.cols());
    tp.accumulate(a, ga);
  });
}

Var mean_rows(const Var& a) {
  require(a.rows() > 0, "mean_rows: empty input");
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  return a.tape().record(std::move(out), a.needs_grad(), [a, n](Tape& tp, const Matrix& g) {
    Matrix ga = (g.row(0) / n).replicate(a.rows(), 1);
    tp.accumulate(a, ga);
  });
}

Var mean_abs_error(const Var& a, const Matrix& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) {
    throw std::invalid_argument("mean_abs_error: prediction and target shapes differ");
  }
  require(target.size() > 0, "mean_abs_error: empty input");
  const double n = static_cast<double>(target.size());
  Matrix diff = a.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.cwiseAbs().sum() / n;
  Matrix sign = diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
  return a.tape().record(std::move(out), a.needs_grad(), [a, n, sign = std::move(sign)](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(a, sign * (g(0, 0) / n));
  });
}

Var pair_tanh_scores(const Var& q, const Var& p, const Var& bias, const Var& v) {
  Tape& t = tape_of(q, p);
  const Index r = q.rows();
  const Index k = p.rows();
  const Index h = q.cols();
  require(p.cols() == h && bias.rows() == 1 && bias.cols() == h && v.rows() == h && v.cols() == 1,
          "pair_tanh_scores: shape mismatch");
  // hidden(i*k + j, :) = tanh(q_i + p_j + bias)
  Matrix hidden(r * k, h);
  Matrix pb = p.value().rowwise() + bias.value().row(0);
  for (Index i = 0; i < r; ++i) {
    hidden.middleRows(i * k, k) = tanh_values(pb.rowwise() + q.value().row(i));
  }
  Eigen::VectorXd flat = hidden * v.value().col(0);
  Matrix out = Eigen::Map<const Matrix>(flat.data(), r, k);
  const bool needs = q.needs_grad() || p.needs_grad() || bias.needs_grad() || v.needs_grad();
  return t.record(std::move(out), needs, [q, p, bias, v, r, k, h, hidden = std::move(hidden)](Tape& tp, const Matrix& g) {
    const Eigen::Map<const Eigen::VectorXd> gflat(g.data(), r * k);
    if (v.needs_grad()) tp.accumulate_expr(v, hidden.transpose() * gflat);
    // d/d(pre) = g_ij * v_h * (1 - hidden^2)
    Matrix dpre = (1.0 - hidden.array().square()).matrix();
    dpre.array().rowwise() *= v.value().col(0).transpose().array();
    dpre.array().colwise() *= gflat.array();
    if (q.needs_grad()) {
      Matrix gq(r, h);
      for (Index i = 0; i < r; ++i) gq.row(i) = dpre.middleRows(i * k, k).colwise().sum();
      tp.accumulate(q, gq);
    }
    if (p.needs_grad()) {
      Matrix gp = Matrix::Zero(k, h);
      for (Index i = 0; i < r; ++i) gp += dpre.middleRows(i * k, k);
      tp.accumulate(p, gp);
    }
    if (bias.needs_grad()) tp.accumulate_expr(bias, dpre.colwise().sum());
  });
}

}  // namespace feddis::ad
