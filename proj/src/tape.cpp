#include "smeta/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace smeta {

namespace {
Matrix ones(int r, int c) {
  Matrix m(r, c);
  for (double& x : m.a) x = 1.0;
  return m;
}
}  // namespace

Tape::Id Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

const Matrix& Tape::value(Id id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("tape: bad node id");
  return nodes_[id].val;
}

bool Tape::needs_grad(Id id) const { return nodes_[id].needs_grad; }

Tape::Id Tape::leaf(Matrix value) {
  Node n;
  n.op = Op::kLeaf;
  n.needs_grad = true;
  n.val = std::move(value);
  return push(std::move(n));
}

Tape::Id Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConst;
  n.needs_grad = false;
  n.val = std::move(value);
  return push(std::move(n));
}

Tape::Id Tape::binary(Op op, Id a, Id b, Matrix val) {
  Node n;
  n.op = op;
  n.in0 = a;
  n.in1 = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.val = std::move(val);
  return push(std::move(n));
}

Tape::Id Tape::unary(Op op, Id a, Matrix val) {
  Node n;
  n.op = op;
  n.in0 = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.val = std::move(val);
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) { return binary(Op::kAdd, a, b, smeta::add(value(a), value(b))); }
Tape::Id Tape::sub(Id a, Id b) { return binary(Op::kSub, a, b, smeta::sub(value(a), value(b))); }
Tape::Id Tape::neg(Id a) { return unary(Op::kNeg, a, smeta::scale(value(a), -1.0)); }

Tape::Id Tape::scale(Id a, double s) {
  Id id = unary(Op::kScale, a, smeta::scale(value(a), s));
  nodes_[id].scalar = s;
  return id;
}

Tape::Id Tape::mul(Id a, Id b) { return binary(Op::kMul, a, b, hadamard(value(a), value(b))); }

Tape::Id Tape::div(Id a, Id b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  if (!x.same_shape(y)) throw std::invalid_argument("tape div: shape mismatch");
  Matrix out = x;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] /= y.a[i];
  return binary(Op::kDiv, a, b, std::move(out));
}

Tape::Id Tape::matmul(Id a, Id b) {
  return binary(Op::kMatmul, a, b, smeta::matmul(value(a), value(b)));
}

Tape::Id Tape::transpose(Id a) { return unary(Op::kTranspose, a, smeta::transpose(value(a))); }

Tape::Id Tape::add_rowvec(Id a, Id r) {
  const Matrix& x = value(a);
  const Matrix& rv = value(r);
  if (rv.rows != 1 || rv.cols != x.cols) throw std::invalid_argument("add_rowvec: shape mismatch");
  Matrix out = x;
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(i, j) += rv(0, j);
  return binary(Op::kAddRowvec, a, r, std::move(out));
}

Tape::Id Tape::add_colvec(Id a, Id c) {
  const Matrix& x = value(a);
  const Matrix& cv = value(c);
  if (cv.cols != 1 || cv.rows != x.rows) throw std::invalid_argument("add_colvec: shape mismatch");
  Matrix out = x;
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(i, j) += cv(i, 0);
  return binary(Op::kAddColvec, a, c, std::move(out));
}

Tape::Id Tape::row_sums(Id a) {
  const Matrix& x = value(a);
  Matrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols; ++j) s += x(i, j);
    out(i, 0) = s;
  }
  return unary(Op::kRowSums, a, std::move(out));
}

Tape::Id Tape::col_sums(Id a) {
  const Matrix& x = value(a);
  Matrix out(1, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(0, j) += x(i, j);
  return unary(Op::kColSums, a, std::move(out));
}

Tape::Id Tape::sum_all(Id a) {
  const Matrix& x = value(a);
  Matrix out(1, 1);
  double s = 0.0;
  for (double v : x.a) s += v;
  out(0, 0) = s;
  return unary(Op::kSumAll, a, std::move(out));
}

Tape::Id Tape::vstack2(Id top, Id bottom) {
  return binary(Op::kVstack, top, bottom, smeta::vstack(value(top), value(bottom)));
}

Tape::Id Tape::slice_rows(Id a, int first_row, int num_rows) {
  const Matrix& x = value(a);
  if (first_row < 0 || num_rows < 0 || first_row + num_rows > x.rows) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Matrix out(num_rows, x.cols);
  for (int i = 0; i < num_rows; ++i)
    for (int j = 0; j < x.cols; ++j) out(i, j) = x(first_row + i, j);
  Id id = unary(Op::kSliceRows, a, std::move(out));
  nodes_[id].scalar = first_row;
  nodes_[id].aux = num_rows;
  return id;
}

Tape::Id Tape::tanh_op(Id a) {
  Matrix out = value(a);
  for (double& x : out.a) x = std::tanh(x);
  return unary(Op::kTanh, a, std::move(out));
}

Tape::Id Tape::relu_op(Id a) {
  Matrix out = value(a);
  for (double& x : out.a) x = x > 0.0 ? x : 0.0;
  return unary(Op::kRelu, a, std::move(out));
}

Tape::Id Tape::exp_op(Id a) {
  Matrix out = value(a);
  for (double& x : out.a) x = std::exp(x);
  return unary(Op::kExp, a, std::move(out));
}

Tape::Id Tape::log_op(Id a) {
  Matrix out = value(a);
  for (double& x : out.a) x = std::log(x);
  return unary(Op::kLog, a, std::move(out));
}

Tape::Id Tape::sqrt_op(Id a) {
  Matrix out = value(a);
  for (double& x : out.a) x = std::sqrt(x);
  return unary(Op::kSqrt, a, std::move(out));
}

Tape::Id Tape::row_max_const(Id a) {
  const Matrix& x = value(a);
  Matrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) {
    double m = x(i, 0);
    for (int j = 1; j < x.cols; ++j) m = std::max(m, x(i, j));
    out(i, 0) = m;
  }
  return constant(std::move(out));
}

void Tape::accumulate(std::vector<Id>& adj, Id node, Id contribution) {
  if (node == kNone || !nodes_[node].needs_grad) return;
  if (node >= static_cast<Id>(adj.size())) return;  // node created during this sweep
  adj[node] = adj[node] == kNone ? contribution : add(adj[node], contribution);
}

std::vector<Tape::Id> Tape::gradients(Id scalar_out, const std::vector<Id>& wrt) {
  const Matrix& v = value(scalar_out);
  if (v.rows != 1 || v.cols != 1) throw std::invalid_argument("gradients: output is not scalar");
  return gradients({{scalar_out, ones(1, 1)}}, wrt);
}

std::vector<Tape::Id> Tape::gradients(const std::vector<std::pair<Id, Matrix>>& seeds,
                                      const std::vector<Id>& wrt) {
  const int snapshot = size();
  std::vector<Id> adj(snapshot, kNone);
  for (const auto& [node, seed] : seeds) {
    if (node < 0 || node >= snapshot) throw std::invalid_argument("gradients: bad seed node");
    if (!value(node).same_shape(seed)) throw std::invalid_argument("gradients: seed shape mismatch");
    accumulate(adj, node, constant(seed));
  }

  for (Id i = snapshot - 1; i >= 0; --i) {
    if (adj[i] == kNone) continue;
    // Copy the header: pushing vjp nodes may reallocate nodes_.
    const Op op = nodes_[i].op;
    const Id in0 = nodes_[i].in0;
    const Id in1 = nodes_[i].in1;
    const double scalar = nodes_[i].scalar;
    const int aux = nodes_[i].aux;
    const Id c = adj[i];

    switch (op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(adj, in0, c);
        accumulate(adj, in1, c);
        break;
      case Op::kSub:
        accumulate(adj, in0, c);
        accumulate(adj, in1, neg(c));
        break;
      case Op::kNeg:
        accumulate(adj, in0, neg(c));
        break;
      case Op::kScale:
        accumulate(adj, in0, scale(c, scalar));
        break;
      case Op::kMul:
        if (nodes_[in0].needs_grad) accumulate(adj, in0, mul(c, in1));
        if (nodes_[in1].needs_grad) accumulate(adj, in1, mul(c, in0));
        break;
      case Op::kDiv:
        if (nodes_[in0].needs_grad) accumulate(adj, in0, div(c, in1));
        if (nodes_[in1].needs_grad) accumulate(adj, in1, neg(div(mul(c, i), in1)));
        break;
      case Op::kMatmul:
        if (nodes_[in0].needs_grad) accumulate(adj, in0, matmul(c, transpose(in1)));
        if (nodes_[in1].needs_grad) accumulate(adj, in1, matmul(transpose(in0), c));
        break;
      case Op::kTranspose:
        accumulate(adj, in0, transpose(c));
        break;
      case Op::kAddRowvec:
        accumulate(adj, in0, c);
        if (nodes_[in1].needs_grad) accumulate(adj, in1, col_sums(c));
        break;
      case Op::kAddColvec:
        accumulate(adj, in0, c);
        if (nodes_[in1].needs_grad) accumulate(adj, in1, row_sums(c));
        break;
      case Op::kRowSums:
        accumulate(adj, in0, matmul(c, constant(ones(1, value(in0).cols))));
        break;
      case Op::kColSums:
        accumulate(adj, in0, matmul(constant(ones(value(in0).rows, 1)), c));
        break;
      case Op::kSumAll: {
        const Matrix& x = value(in0);
        Id expanded = matmul(matmul(constant(ones(x.rows, 1)), c), constant(ones(1, x.cols)));
        accumulate(adj, in0, expanded);
        break;
      }
      case Op::kVstack: {
        const int top_rows = value(in0).rows;
        const int bottom_rows = value(in1).rows;
        if (nodes_[in0].needs_grad) accumulate(adj, in0, slice_rows(c, 0, top_rows));
        if (nodes_[in1].needs_grad) accumulate(adj, in1, slice_rows(c, top_rows, bottom_rows));
        break;
      }
      case Op::kSliceRows: {
        const Matrix& x = value(in0);
        const int first = static_cast<int>(scalar);
        Id padded = c;
        if (first > 0) padded = vstack2(constant(Matrix(first, x.cols)), padded);
        const int tail = x.rows - first - aux;
        if (tail > 0) padded = vstack2(padded, constant(Matrix(tail, x.cols)));
        accumulate(adj, in0, padded);
        break;
      }
      case Op::kTanh: {
        Id one = constant(ones(value(i).rows, value(i).cols));
        accumulate(adj, in0, mul(c, sub(one, mul(i, i))));
        break;
      }
      case Op::kRelu: {
        const Matrix& x = value(in0);
        Matrix mask(x.rows, x.cols);
        for (size_t k = 0; k < x.a.size(); ++k) mask.a[k] = x.a[k] > 0.0 ? 1.0 : 0.0;
        accumulate(adj, in0, mul(c, constant(std::move(mask))));
        break;
      }
      case Op::kExp:
        accumulate(adj, in0, mul(c, i));
        break;
      case Op::kLog:
        accumulate(adj, in0, div(c, in0));
        break;
      case Op::kSqrt:
        accumulate(adj, in0, div(scale(c, 0.5), i));
        break;
    }
  }

  std::vector<Id> out(wrt.size(), kNone);
  for (size_t k = 0; k < wrt.size(); ++k) {
    const Id w = wrt[k];
    if (w < 0 || w >= snapshot) throw std::invalid_argument("gradients: bad wrt node");
    out[k] = adj[w];
  }
  return out;
}

}  // namespace smeta
