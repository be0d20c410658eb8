#pragma once

#include <utility>
#include <vector>

#include "smeta/linalg.hpp"

namespace smeta {

// Reverse-mode automatic differentiation over matrix-valued nodes.
//
// The tape is an append-only arena: every operation records its inputs and
// value. A reverse sweep builds adjoints *as tape nodes* (each primitive's
// vector-Jacobian product is expressed through the same primitives), so a
// gradient returned by gradients() is itself a differentiable function of the
// leaves. That is what makes exact second-order meta-gradients possible: the
// inner-loop gradient steps live on the tape, and one ordinary reverse sweep
// through them differentiates the whole unrolled computation.
class Tape {
 public:
  using Id = int;
  static constexpr Id kNone = -1;

  Id leaf(Matrix value);      // differentiable input (parameters, data we differentiate by)
  Id constant(Matrix value);  // value that never receives gradients

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id neg(Id a);
  Id scale(Id a, double s);
  Id mul(Id a, Id b);  // elementwise
  Id div(Id a, Id b);  // elementwise
  Id matmul(Id a, Id b);
  Id transpose(Id a);
  Id add_rowvec(Id a, Id r);  // broadcast 1 x n across rows of m x n
  Id add_colvec(Id a, Id c);  // broadcast m x 1 across columns of m x n
  Id row_sums(Id a);          // m x n -> m x 1
  Id col_sums(Id a);          // m x n -> 1 x n
  Id sum_all(Id a);           // m x n -> 1 x 1
  Id vstack2(Id top, Id bottom);
  Id slice_rows(Id a, int first_row, int num_rows);
  Id tanh_op(Id a);
  Id relu_op(Id a);  // subgradient at 0 is 0
  Id exp_op(Id a);
  Id log_op(Id a);
  Id sqrt_op(Id a);

  // Row-wise max as a *constant* node (used as the log-sum-exp shift; a
  // shift-invariant readout keeps the exact gradient while the shift itself
  // contributes none).
  Id row_max_const(Id a);

  const Matrix& value(Id id) const;
  int size() const { return static_cast<int>(nodes_.size()); }
  bool needs_grad(Id id) const;

  // Reverse sweep. Each seed pair (node, adjoint matrix) injects an external
  // adjoint at that node; a scalar objective is seeded with [[1]]. Returns
  // one adjoint node per requested id (kNone when no gradient reached it --
  // treat as zero). Adjoint nodes are appended to this tape, so they can be
  // fed back into further ops (create-graph semantics by construction).
  std::vector<Id> gradients(const std::vector<std::pair<Id, Matrix>>& seeds,
                            const std::vector<Id>& wrt);
  std::vector<Id> gradients(Id scalar_out, const std::vector<Id>& wrt);

 private:
  enum class Op {
    kLeaf, kConst, kAdd, kSub, kNeg, kScale, kMul, kDiv, kMatmul, kTranspose,
    kAddRowvec, kAddColvec, kRowSums, kColSums, kSumAll, kVstack, kSliceRows,
    kTanh, kRelu, kExp, kLog, kSqrt,
  };
  struct Node {
    Op op;
    Id in0 = kNone;
    Id in1 = kNone;
    double scalar = 0.0;  // kScale factor / kSliceRows first_row
    int aux = 0;          // kSliceRows num_rows
    bool needs_grad = false;
    Matrix val;
  };

  Id push(Node n);
  Id binary(Op op, Id a, Id b, Matrix val);
  Id unary(Op op, Id a, Matrix val);
  void accumulate(std::vector<Id>& adj, Id node, Id contribution);

  std::vector<Node> nodes_;
};

}  // namespace smeta
