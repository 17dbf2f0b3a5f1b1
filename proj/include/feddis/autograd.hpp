#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is 2-D; scalars are 1x1. A Tape records the forward
// computation and replays it backwards once.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace feddis {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

/// A named learnable tensor together with its accumulated gradient.
struct Parameter {
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool valid() const { return tape_ != nullptr; }
  bool needs_grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  /// Free leaf whose gradient can be read with grad() after backward().
  Var leaf(Matrix value);
  /// Leaf tied to a Parameter; backward() adds into param.grad.
  Var bind(Parameter& param);

  /// Records an op result. `backward` receives the output gradient and must
  /// call accumulate() for each input.
  Var record(Matrix value, bool needs_grad, Backward backward);

  void accumulate(const Var& target, const Matrix& grad);
  template <typename Expr>
  void accumulate_expr(const Var& target, const Expr& expr) {
    Node& node = nodes_[static_cast<std::size_t>(target.id())];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0) {
      node.grad = expr;
    } else {
      node.grad += expr;
    }
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to all leaves.
  void backward(const Var& out);

  /// Gradient of the last backward() output w.r.t. v (zeros if unreached).
  Matrix grad(const Var& v) const;

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

// Elementwise arithmetic. Shapes must agree exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// 1 - a
Var one_minus(const Var& a);
/// Broadcast a [1 x c] row over every row of a [r x c] matrix.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);

// Pointwise nonlinearities.
Var sigmoid(const Var& a);
/// tanh through exp so it vectorizes in double precision.
Matrix tanh_values(const Matrix& x);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);

/// Numerically stable softmax over each row.
Var softmax_rows(const Var& a);

// Structural.
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, Index start, Index count);

/// X holds several samples of n nodes in node-major order
/// (row = node * samples + sample). Mixes nodes within each sample: for a
/// square [n x n] M, sample s of the result is M * X_s.
Var block_left_mul(const Var& m, const Var& x);
/// Mean over samples for each node of a node-major X; result is [nodes x c].
Var block_mean(const Var& x, Index nodes);

// Reductions (all return 1x1 unless stated).
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// [r x c] -> [r x 1]
Var sum_cols(const Var& a);
/// [r x c] -> [1 x c]
Var mean_rows(const Var& a);
/// mean |a - target| with a constant target.
Var mean_abs_error(const Var& a, const Matrix& target);

/// Additive attention scores: out(i,k) = sum_h v_h * tanh(q(i,h) + p(k,h) + b_h).
/// q is [r x h], p is [k x h], bias is [1 x h], v is [h x 1]; returns [r x k].
Var pair_tanh_scores(const Var& q, const Var& p, const Var& bias, const Var& v);

}  // namespace ad
}  // namespace feddis
