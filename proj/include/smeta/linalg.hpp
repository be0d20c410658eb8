#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace smeta {

using VecD = std::vector<double>;

// Dense row-major matrix of doubles. Everything in this project is desk-scale
// (dimensions in the tens), so there is no blocking, no views, no expression
// templates -- just a flat buffer and plain loops with a fixed accumulation
// order so results are bitwise reproducible.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;  // row-major, a[r * cols + c]

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::vector<double> data);

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  static Matrix identity(int n);
  static Matrix zeros(int r, int c) { return Matrix(r, c); }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);
// <A, B>_F = sum of elementwise products, fixed order.
double dot(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix row(const Matrix& m, int r);            // 1 x cols
void set_row(Matrix& m, int r, const VecD& v);
VecD get_row(const Matrix& m, int r);

// Thin SVD M = U diag(sigma) V^T with r = min(rows, cols) columns.
// sigma is descending and non-negative; U, V have orthonormal columns.
// Deterministic: the first nonzero entry of each left singular vector is
// made non-negative.
struct SvdResult {
  Matrix u;      // m x r
  VecD sigma;    // length r, descending
  Matrix v;      // n x r
};

SvdResult svd(const Matrix& m);

// sigma_k floor used by condition_number before dividing.
inline constexpr double kKappaSigmaFloor = 1e-12;

struct CondNumber {
  double value = 1.0;
  bool degenerate = false;  // sigma_k fell below the floor
};

// kappa(M) = sigma_1 / max(sigma_k, floor). k_rank <= min(rows, cols);
// k_rank <= 0 selects the smallest singular value. Never throws on
// rank-deficient input: the ratio is floored and flagged instead, because
// training traces routinely pass through near-singular phases.
CondNumber condition_number(const Matrix& m, int k_rank = 0);
CondNumber condition_number(const SvdResult& s, int k_rank = 0);

double frobenius_norm(const Matrix& m);

// H_sigma(M) = sum_i p_i log p_i with p = softmax(sigma). Lives in
// [-log r, 0]; the minimum is attained exactly at a uniform spectrum.
double singular_entropy(const Matrix& m);
double softmax_entropy(const VecD& values);  // same formula on a raw vector

// Relative gap below which neighbouring singular values count as tied.
inline constexpr double kSigmaTieTol = 1e-9;

struct SigmaGradient {
  Matrix grad;       // u_i v_i^T, unit Frobenius norm
  bool tied = false; // sigma_i within tie tolerance of a neighbour
};

// d sigma_i / dM = u_i v_i^T (subgradient from the deterministic basis when
// tied). index is 0-based.
SigmaGradient singular_value_gradient(const SvdResult& s, int index);
SigmaGradient singular_value_gradient(const Matrix& m, int index);

// CSV: one row per line, comma separated, 17 significant digits (round-trips
// doubles exactly).
std::string matrix_to_csv(const Matrix& m);
Matrix matrix_from_csv(const std::string& text);

}  // namespace smeta
