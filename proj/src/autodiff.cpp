#include "iada/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace iada::ad {

ShapeError::ShapeError(Index node, const std::string& what)
    : std::invalid_argument("node " + std::to_string(node) + ": " + what), node_(node) {}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::AddRow: return "add_row";
    case Op::MulCol: return "mul_col";
    case Op::Transpose: return "transpose";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Sign: return "sign";
    case Op::Step: return "step";
    case Op::SumAll: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::RowBroadcast: return "row_broadcast";
    case Op::ColBroadcast: return "col_broadcast";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::GatherCols: return "gather_cols";
    case Op::ScatterCols: return "scatter_cols";
    case Op::GatherRows: return "gather_rows";
    case Op::ScatterRows: return "scatter_rows";
  }
  return "?";
}

Eigen::VectorXd logsumexp(const Matrix& z) {
  Eigen::VectorXd out(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    if (!std::isfinite(m)) {
      out(i) = m;
      continue;
    }
    out(i) = m + std::log((z.row(i).array() - m).exp().sum());
  }
  return out;
}

Matrix softmax(const Matrix& z) {
  const Eigen::VectorXd lse = logsumexp(z);
  return (z.colwise() - lse).array().exp().matrix();
}

Matrix one_hot(std::span<const int> labels, Eigen::Index classes) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return out;
}

const Matrix& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad && grad_enabled_;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<Index>(nodes_.size() - 1)};
}

const Matrix& Tape::value(Index id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw TapeError("missing node " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)].value;
}

bool Tape::requires_grad(Index id) const {
  value(id);
  return nodes_[static_cast<std::size_t>(id)].requires_grad;
}

Op Tape::op(Index id) const {
  value(id);
  return nodes_[static_cast<std::size_t>(id)].op;
}

void Tape::set_leaf_value(Var leaf, Matrix v) {
  auto& n = nodes_.at(static_cast<std::size_t>(leaf.id));
  if (n.op != Op::Leaf) throw TapeError("set_leaf_value on non-leaf node " + std::to_string(leaf.id));
  if (v.rows() != n.value.rows() || v.cols() != n.value.cols())
    throw ShapeError(leaf.id, "replacement value has a different shape");
  n.value = std::move(v);
}

void Tape::replay() {
  for (auto& n : nodes_)
    if (n.op != Op::Leaf) n.value = compute(n);
}

namespace {

std::string dims(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void check_index(const Labels& idx, Eigen::Index bound, Index id) {
  for (int k : idx)
    if (k < 0 || k >= bound) throw ShapeError(id, "index " + std::to_string(k) + " out of range");
}

}  // namespace

void Tape::check_shapes(const Node& n, Index id) const {
  const Matrix* a = n.arity > 0 ? &nodes_[static_cast<std::size_t>(n.in[0])].value : nullptr;
  const Matrix* b = n.arity > 1 ? &nodes_[static_cast<std::size_t>(n.in[1])].value : nullptr;
  auto fail = [&](const char* what) {
    std::string msg = std::string(op_name(n.op)) + ": " + what + " (" + dims(*a);
    if (b) msg += ", " + dims(*b);
    throw ShapeError(id, msg + ")");
  };
  switch (n.op) {
    case Op::MatMul:
      if (a->cols() != b->rows()) fail("inner dimensions differ");
      break;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
      if (a->rows() != b->rows() || a->cols() != b->cols()) fail("shapes differ");
      break;
    case Op::AddRow:
      if (b->rows() != 1 || b->cols() != a->cols()) fail("row operand must be 1 x cols");
      break;
    case Op::MulCol:
      if (b->cols() != 1 || b->rows() != a->rows()) fail("column operand must be rows x 1");
      break;
    case Op::RowBroadcast:
      if (a->rows() != 1) fail("operand must be a single row");
      break;
    case Op::ColBroadcast:
      if (a->cols() != 1) fail("operand must be a single column");
      break;
    case Op::SoftmaxCrossEntropy:
    case Op::GatherCols:
      if (static_cast<Eigen::Index>(n.index->size()) != a->rows()) fail("one index per row required");
      check_index(*n.index, a->cols(), id);
      break;
    case Op::ScatterCols:
      if (a->cols() != 1 || static_cast<Eigen::Index>(n.index->size()) != a->rows())
        fail("operand must be rows x 1 with one index per row");
      check_index(*n.index, n.dim, id);
      break;
    case Op::GatherRows:
      check_index(*n.index, a->rows(), id);
      break;
    case Op::ScatterRows:
      if (static_cast<Eigen::Index>(n.index->size()) != a->rows()) fail("one index per row required");
      check_index(*n.index, n.dim, id);
      break;
    default:
      break;
  }
}

Matrix Tape::compute(const Node& n) const {
  const Matrix& a = nodes_[static_cast<std::size_t>(n.in[0])].value;
  auto second = [&]() -> const Matrix& { return nodes_[static_cast<std::size_t>(n.in[1])].value; };
  switch (n.op) {
    case Op::Leaf: return n.value;
    case Op::MatMul: return a * second();
    case Op::Add: return a + second();
    case Op::Sub: return a - second();
    case Op::Mul: return a.cwiseProduct(second());
    case Op::Scale: return a * n.scalar;
    case Op::AddScalar: return (a.array() + n.scalar).matrix();
    case Op::AddRow: return a.rowwise() + second().row(0);
    case Op::MulCol: return (a.array().colwise() * second().col(0).array()).matrix();
    case Op::Transpose: return a.transpose();
    case Op::Tanh: return a.array().tanh().matrix();
    case Op::Relu: return a.cwiseMax(0.0);
    case Op::Sign: return a.unaryExpr([](double x) { return double((x > 0.0) - (x < 0.0)); });
    case Op::Step: return a.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Op::SumAll: return Matrix::Constant(1, 1, a.sum());
    case Op::SumRows: return a.colwise().sum();
    case Op::SumCols: return a.rowwise().sum();
    case Op::RowBroadcast: return a.replicate(n.dim, 1);
    case Op::ColBroadcast: return a.replicate(1, n.dim);
    case Op::SoftmaxRows: return softmax(a);
    case Op::LogSumExpRows: return logsumexp(a);
    case Op::SoftmaxCrossEntropy: {
      Eigen::VectorXd out = logsumexp(a);
      for (Eigen::Index i = 0; i < a.rows(); ++i) out(i) -= a(i, (*n.index)[static_cast<std::size_t>(i)]);
      return out;
    }
    case Op::GatherCols: {
      Matrix out(a.rows(), 1);
      for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, 0) = a(i, (*n.index)[static_cast<std::size_t>(i)]);
      return out;
    }
    case Op::ScatterCols: {
      Matrix out = Matrix::Zero(a.rows(), n.dim);
      for (Eigen::Index i = 0; i < a.rows(); ++i) out(i, (*n.index)[static_cast<std::size_t>(i)]) = a(i, 0);
      return out;
    }
    case Op::GatherRows: {
      Matrix out(static_cast<Eigen::Index>(n.index->size()), a.cols());
      for (std::size_t i = 0; i < n.index->size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.row((*n.index)[i]);
      return out;
    }
    case Op::ScatterRows: {
      Matrix out = Matrix::Zero(n.dim, a.cols());
      for (std::size_t i = 0; i < n.index->size(); ++i) out.row((*n.index)[i]) += a.row(static_cast<Eigen::Index>(i));
      return out;
    }
  }
  throw TapeError("unknown op");
}

Var Tape::record(Op op, std::initializer_list<Var> inputs, double scalar,
                 std::shared_ptr<const Labels> index, Eigen::Index dim) {
  Node n;
  n.op = op;
  n.scalar = scalar;
  n.index = std::move(index);
  n.dim = dim;
  for (const Var& v : inputs) {
    if (v.tape != this) throw TapeError("operand recorded on a different tape");
    value(v.id);
    n.in[static_cast<std::size_t>(n.arity++)] = v.id;
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  n.requires_grad = n.requires_grad && grad_enabled_;
  const auto id = static_cast<Index>(nodes_.size());
  check_shapes(n, id);
  n.value = compute(n);
  nodes_.push_back(std::move(n));
  return Var{this, id};
}

void Tape::backprop_node(Index id, Var g, std::vector<std::optional<Var>>& grads,
                         const std::vector<char>& relevant) {
  // Copy what we need: recording below may reallocate nodes_.
  const Op op = nodes_[static_cast<std::size_t>(id)].op;
  const Var a{this, nodes_[static_cast<std::size_t>(id)].in[0]};
  const Var b{this, nodes_[static_cast<std::size_t>(id)].in[1]};
  const double s = nodes_[static_cast<std::size_t>(id)].scalar;
  const auto index = nodes_[static_cast<std::size_t>(id)].index;
  const Var self{this, id};

  auto wants = [&](Var v) { return v.id >= 0 && relevant[static_cast<std::size_t>(v.id)] != 0; };
  auto accumulate = [&](Var v, Var contrib) {
    auto& slot = grads[static_cast<std::size_t>(v.id)];
    slot = slot ? *slot + contrib : contrib;
  };

  switch (op) {
    case Op::Leaf:
      return;
    case Op::MatMul:
      if (wants(a)) accumulate(a, matmul(g, transpose(b)));
      if (wants(b)) accumulate(b, matmul(transpose(a), g));
      return;
    case Op::Add:
      if (wants(a)) accumulate(a, g);
      if (wants(b)) accumulate(b, g);
      return;
    case Op::Sub:
      if (wants(a)) accumulate(a, g);
      if (wants(b)) accumulate(b, -g);
      return;
    case Op::Mul:
      if (wants(a)) accumulate(a, g * b);
      if (wants(b)) accumulate(b, g * a);
      return;
    case Op::Scale:
      if (wants(a)) accumulate(a, scale(g, s));
      return;
    case Op::AddScalar:
      if (wants(a)) accumulate(a, g);
      return;
    case Op::AddRow:
      if (wants(a)) accumulate(a, g);
      if (wants(b)) accumulate(b, sum_rows(g));
      return;
    case Op::MulCol:
      if (wants(a)) accumulate(a, mul_col(g, b));
      if (wants(b)) accumulate(b, sum_cols(g * a));
      return;
    case Op::Transpose:
      if (wants(a)) accumulate(a, transpose(g));
      return;
    case Op::Tanh:
      if (wants(a)) accumulate(a, g * add_scalar(-(self * self), 1.0));
      return;
    case Op::Relu:
      if (wants(a)) accumulate(a, g * step(a));
      return;
    case Op::Sign:
      if (wants(a) && grad_enabled_)
        throw TapeError("sign (node " + std::to_string(id) +
                        ") lies on a path differentiated with create_graph");
      return;
    case Op::Step:
      return;
    case Op::SumAll:
      if (wants(a)) accumulate(a, row_broadcast(col_broadcast(g, a.cols()), a.rows()));
      return;
    case Op::SumRows:
      if (wants(a)) accumulate(a, row_broadcast(g, a.rows()));
      return;
    case Op::SumCols:
      if (wants(a)) accumulate(a, col_broadcast(g, a.cols()));
      return;
    case Op::RowBroadcast:
      if (wants(a)) accumulate(a, sum_rows(g));
      return;
    case Op::ColBroadcast:
      if (wants(a)) accumulate(a, sum_cols(g));
      return;
    case Op::SoftmaxRows:
      if (wants(a)) accumulate(a, self * (g - col_broadcast(sum_cols(g * self), a.cols())));
      return;
    case Op::LogSumExpRows:
      if (wants(a)) accumulate(a, mul_col(softmax_rows(a), g));
      return;
    case Op::SoftmaxCrossEntropy:
      if (wants(a)) {
        Var target = constant(one_hot(*index, a.cols()));
        accumulate(a, mul_col(softmax_rows(a) - target, g));
      }
      return;
    case Op::GatherCols:
      if (wants(a)) accumulate(a, scatter_cols(g, index, a.cols()));
      return;
    case Op::ScatterCols:
      if (wants(a)) accumulate(a, gather_cols(g, index));
      return;
    case Op::GatherRows:
      if (wants(a)) accumulate(a, scatter_rows(g, index, a.rows()));
      return;
    case Op::ScatterRows:
      if (wants(a)) accumulate(a, gather_rows(g, index));
      return;
  }
  throw TapeError("unknown op at node " + std::to_string(id));
}

std::vector<Var> Tape::gradients(Var output, std::span<const Var> wrt,
                                 const std::optional<Matrix>& seed, bool create_graph) {
  value(output.id);
  const auto out = static_cast<std::size_t>(output.id);

  // A node is relevant if some requested input flows into it.
  std::vector<char> relevant(out + 1, 0);
  for (const Var& w : wrt) {
    value(w.id);
    if (static_cast<std::size_t>(w.id) <= out) relevant[static_cast<std::size_t>(w.id)] = 1;
  }
  for (std::size_t i = 0; i <= out; ++i) {
    const Node& n = nodes_[i];
    if (!n.requires_grad) {
      relevant[i] = 0;
      continue;
    }
    for (int k = 0; k < n.arity; ++k)
      if (relevant[static_cast<std::size_t>(n.in[static_cast<std::size_t>(k)])]) relevant[i] = 1;
  }

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace(*this);

  std::vector<std::optional<Var>> grads(out + 1);
  if (relevant[out]) {
    Matrix s = seed ? *seed : Matrix::Ones(nodes_[out].value.rows(), nodes_[out].value.cols());
    if (s.rows() != nodes_[out].value.rows() || s.cols() != nodes_[out].value.cols())
      throw ShapeError(output.id, "seed shape does not match output");
    grads[out] = constant(std::move(s));
  }
  for (std::size_t i = out + 1; i-- > 0;) {
    if (!relevant[i] || !grads[i] || nodes_[i].op == Op::Leaf) continue;
    backprop_node(static_cast<Index>(i), *grads[i], grads, relevant);
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const Var& w : wrt) {
    const auto wi = static_cast<std::size_t>(w.id);
    if (wi <= out && grads[wi]) {
      result.push_back(*grads[wi]);
    } else {
      result.push_back(constant(Matrix::Zero(nodes_[wi].value.rows(), nodes_[wi].value.cols())));
    }
  }
  return result;
}

Var matmul(Var a, Var b) { return a.tape->record(Op::MatMul, {a, b}); }
Var operator+(Var a, Var b) { return a.tape->record(Op::Add, {a, b}); }
Var operator-(Var a, Var b) { return a.tape->record(Op::Sub, {a, b}); }
Var operator*(Var a, Var b) { return a.tape->record(Op::Mul, {a, b}); }
Var operator-(Var a) { return scale(a, -1.0); }
Var scale(Var a, double s) { return a.tape->record(Op::Scale, {a}, s); }
Var add_scalar(Var a, double s) { return a.tape->record(Op::AddScalar, {a}, s); }
Var add_row(Var a, Var row) { return a.tape->record(Op::AddRow, {a, row}); }
Var mul_col(Var a, Var col) { return a.tape->record(Op::MulCol, {a, col}); }
Var transpose(Var a) { return a.tape->record(Op::Transpose, {a}); }
Var tanh(Var a) { return a.tape->record(Op::Tanh, {a}); }
Var relu(Var a) { return a.tape->record(Op::Relu, {a}); }
Var sign(Var a) { return a.tape->record(Op::Sign, {a}); }
Var step(Var a) { return a.tape->record(Op::Step, {a}); }
Var sum(Var a) { return a.tape->record(Op::SumAll, {a}); }
Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }
Var sum_rows(Var a) { return a.tape->record(Op::SumRows, {a}); }
Var sum_cols(Var a) { return a.tape->record(Op::SumCols, {a}); }
Var row_broadcast(Var row, Eigen::Index rows) { return row.tape->record(Op::RowBroadcast, {row}, 0.0, nullptr, rows); }
Var col_broadcast(Var col, Eigen::Index cols) { return col.tape->record(Op::ColBroadcast, {col}, 0.0, nullptr, cols); }
Var softmax_rows(Var z) { return z.tape->record(Op::SoftmaxRows, {z}); }
Var logsumexp_rows(Var z) { return z.tape->record(Op::LogSumExpRows, {z}); }

Var softmax_cross_entropy(Var z, std::shared_ptr<const Labels> labels) {
  return z.tape->record(Op::SoftmaxCrossEntropy, {z}, 0.0, std::move(labels));
}
Var softmax_cross_entropy(Var z, const Labels& labels) {
  return softmax_cross_entropy(z, std::make_shared<const Labels>(labels));
}

Var gather_cols(Var a, std::shared_ptr<const Labels> cols) {
  return a.tape->record(Op::GatherCols, {a}, 0.0, std::move(cols));
}
Var scatter_cols(Var v, std::shared_ptr<const Labels> cols, Eigen::Index width) {
  return v.tape->record(Op::ScatterCols, {v}, 0.0, std::move(cols), width);
}
Var gather_rows(Var a, std::shared_ptr<const Labels> rows) {
  return a.tape->record(Op::GatherRows, {a}, 0.0, std::move(rows));
}
Var scatter_rows(Var v, std::shared_ptr<const Labels> rows, Eigen::Index height) {
  return v.tape->record(Op::ScatterRows, {v}, 0.0, std::move(rows), height);
}

}  // namespace iada::ad
