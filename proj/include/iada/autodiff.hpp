#pragma once

// Reverse-mode differentiation over dense 2-D matrices.
//
// Every node on a Tape owns its value. Backward rules are themselves written
// with tape operations, so a gradient produced with `create_graph = true` is
// an ordinary differentiable Var and can be fed to a second backward pass
// (reverse-over-reverse). This is what the bilevel meta step relies on.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace iada::ad {

using Matrix = Eigen::MatrixXd;
using Index = std::int32_t;

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(Index node, const std::string& what);
  Index node() const { return node_; }

 private:
  Index node_;
};

/// Raised when the engine finds an inconsistency in its own bookkeeping, or
/// a non-twice-differentiable primitive on a path being differentiated with
/// `create_graph`.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRow,
  MulCol,
  Transpose,
  Tanh,
  Relu,
  Sign,
  Step,
  SumAll,
  SumRows,
  SumCols,
  RowBroadcast,
  ColBroadcast,
  SoftmaxRows,
  LogSumExpRows,
  SoftmaxCrossEntropy,
  GatherCols,
  ScatterCols,
  GatherRows,
  ScatterRows,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  Index id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
};

using Labels = std::vector<int>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value(Index id) const;
  bool requires_grad(Index id) const;
  Op op(Index id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Overwrite a leaf's value. Call replay() to refresh dependent nodes.
  void set_leaf_value(Var leaf, Matrix value);

  /// Recompute every non-leaf node from current leaf values, in record order.
  void replay();

  /// Gradients of `output` w.r.t. each Var in `wrt`. `seed` defaults to ones
  /// shaped like the output. With `create_graph` the returned gradients are
  /// recorded on this tape and can be differentiated again.
  std::vector<Var> gradients(Var output, std::span<const Var> wrt,
                             const std::optional<Matrix>& seed = std::nullopt,
                             bool create_graph = false);

  // Recording entry point used by the free-function operations below.
  Var record(Op op, std::initializer_list<Var> inputs, double scalar = 0.0,
             std::shared_ptr<const Labels> index = nullptr, Eigen::Index dim = 0);

  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::array<Index, 2> in{-1, -1};
    int arity = 0;
    bool requires_grad = false;
    double scalar = 0.0;
    std::shared_ptr<const Labels> index;
    Eigen::Index dim = 0;
    Matrix value;
  };

  Matrix compute(const Node& n) const;
  void check_shapes(const Node& n, Index id) const;
  void backprop_node(Index id, Var upstream, std::vector<std::optional<Var>>& grads,
                     const std::vector<char>& relevant);

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  friend class NoGradGuard;
};

/// Nodes recorded while a guard is alive never require gradients.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.grad_enabled_) {
    tape_.grad_enabled_ = false;
  }
  ~NoGradGuard() { tape_.grad_enabled_ = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// Elementwise and linear-algebra primitives.
Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // elementwise (Hadamard)
Var operator-(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);  // a(r×c) + row(1×c) broadcast down rows
Var mul_col(Var a, Var col);  // a(r×c) ⊙ col(r×1) broadcast across columns
Var transpose(Var a);
Var tanh(Var a);
Var relu(Var a);
/// sign with sign(0) = 0; zero gradient.
Var sign(Var a);
/// Indicator of a > 0 as 0/1 values; zero gradient.
Var step(Var a);

// Reductions and broadcasts.
Var sum(Var a);       // 1×1
Var mean(Var a);      // 1×1
Var sum_rows(Var a);  // 1×c, column totals
Var sum_cols(Var a);  // r×1, row totals
Var row_broadcast(Var row, Eigen::Index rows);
Var col_broadcast(Var col, Eigen::Index cols);

// Softmax family; every one is evaluated through a max-shifted log-sum-exp.
Var softmax_rows(Var z);
Var logsumexp_rows(Var z);  // r×1
/// Per-row −log softmax(z)[label], r×1.
Var softmax_cross_entropy(Var z, std::shared_ptr<const Labels> labels);
Var softmax_cross_entropy(Var z, const Labels& labels);

// Index operations.
Var gather_cols(Var a, std::shared_ptr<const Labels> cols);  // out(i) = a(i, cols[i])
Var scatter_cols(Var v, std::shared_ptr<const Labels> cols, Eigen::Index width);
Var gather_rows(Var a, std::shared_ptr<const Labels> rows);  // out.row(i) = a.row(rows[i])
Var scatter_rows(Var v, std::shared_ptr<const Labels> rows, Eigen::Index height);

/// Numerically stable row-wise log-sum-exp on plain matrices.
Eigen::VectorXd logsumexp(const Matrix& z);
Matrix softmax(const Matrix& z);
Matrix one_hot(std::span<const int> labels, Eigen::Index classes);

}  // namespace iada::ad
