#include "smeta/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "smeta/csvio.hpp"

namespace smeta {

Matrix::Matrix(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
  if (a.size() != static_cast<size_t>(r) * c) {
    throw std::invalid_argument("Matrix: data size does not match shape");
  }
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Matrix out = a;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += b.a[i];
  return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
  Matrix out = a;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= b.a[i];
  return out;
}

Matrix scale(const Matrix& m, double s) {
  Matrix out = m;
  for (double& x : out.a) x *= s;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("hadamard: shape mismatch");
  Matrix out = a;
  for (size_t i = 0; i < out.a.size(); ++i) out.a[i] *= b.a[i];
  return out;
}

double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i) s += a.a[i] * b.a[i];
  return s;
}

double max_abs(const Matrix& m) {
  double v = 0.0;
  for (double x : m.a) v = std::max(v, std::fabs(x));
  return v;
}

bool all_finite(const Matrix& m) {
  for (double x : m.a)
    if (!std::isfinite(x)) return false;
  return true;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows == 0) return bottom;
  if (bottom.rows == 0) return top;
  if (top.cols != bottom.cols) throw std::invalid_argument("vstack: column mismatch");
  Matrix out(top.rows + bottom.rows, top.cols);
  std::copy(top.a.begin(), top.a.end(), out.a.begin());
  std::copy(bottom.a.begin(), bottom.a.end(), out.a.begin() + top.a.size());
  return out;
}

Matrix row(const Matrix& m, int r) {
  Matrix out(1, m.cols);
  for (int j = 0; j < m.cols; ++j) out(0, j) = m(r, j);
  return out;
}

void set_row(Matrix& m, int r, const VecD& v) {
  if (static_cast<int>(v.size()) != m.cols) throw std::invalid_argument("set_row: length mismatch");
  for (int j = 0; j < m.cols; ++j) m(r, j) = v[j];
}

VecD get_row(const Matrix& m, int r) {
  VecD v(m.cols);
  for (int j = 0; j < m.cols; ++j) v[j] = m(r, j);
  return v;
}

namespace {

// One-sided cyclic Jacobi on the side with fewer columns: plane rotations
// orthogonalize the working columns; singular values are the final column
// norms. Chosen over a Gram-matrix eigendecomposition because it keeps full
// relative accuracy in the small singular values at these tiny sizes.
struct OneSidedJacobi {
  Matrix b;  // working matrix, rows >= cols
  Matrix v;  // accumulated right rotations, cols x cols

  explicit OneSidedJacobi(const Matrix& m) : b(m), v(Matrix::identity(m.cols)) {
    const int n = b.cols;
    const double tol = 1e-15;
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
      bool rotated = false;
      for (int p = 0; p < n - 1; ++p) {
        for (int q = p + 1; q < n; ++q) {
          double app = 0.0, aqq = 0.0, apq = 0.0;
          for (int i = 0; i < b.rows; ++i) {
            const double bp = b(i, p), bq = b(i, q);
            app += bp * bp;
            aqq += bq * bq;
            apq += bp * bq;
          }
          if (app == 0.0 || aqq == 0.0) continue;
          if (std::fabs(apq) <= tol * std::sqrt(app * aqq)) continue;
          const double zeta = (aqq - app) / (2.0 * apq);
          const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
          const double c = 1.0 / std::sqrt(1.0 + t * t);
          const double s = c * t;
          for (int i = 0; i < b.rows; ++i) {
            const double bp = b(i, p), bq = b(i, q);
            b(i, p) = c * bp - s * bq;
            b(i, q) = s * bp + c * bq;
          }
          for (int i = 0; i < n; ++i) {
            const double vp = v(i, p), vq = v(i, q);
            v(i, p) = c * vp - s * vq;
            v(i, q) = s * vp + c * vq;
          }
          rotated = true;
        }
      }
      if (!rotated) break;
    }
  }
};

// Column norm with a fixed accumulation order.
double col_norm(const Matrix& m, int j) {
  double s = 0.0;
  for (int i = 0; i < m.rows; ++i) s += m(i, j) * m(i, j);
  return std::sqrt(s);
}

// Fill column j of u with a unit vector orthogonal to columns [0, j) --
// needed when the input is rank deficient and a working column vanished.
// Deterministic: tries canonical basis vectors in index order.
void complete_column(Matrix& u, int j) {
  const int m = u.rows;
  for (int cand = 0; cand < m; ++cand) {
    VecD w(m, 0.0);
    w[cand] = 1.0;
    for (int k = 0; k < u.cols; ++k) {
      if (k == j) continue;
      double proj = 0.0;
      for (int i = 0; i < m; ++i) proj += u(i, k) * w[i];
      for (int i = 0; i < m; ++i) w[i] -= proj * u(i, k);
    }
    double nrm = 0.0;
    for (double x : w) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm > 0.5) {
      for (int i = 0; i < m; ++i) u(i, j) = w[i] / nrm;
      return;
    }
  }
  throw std::runtime_error("svd: failed to complete orthonormal basis");
}

SvdResult svd_tall(const Matrix& m) {
  // rows >= cols assumed.
  const int n = m.cols;
  OneSidedJacobi j(m);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  VecD norms(n);
  for (int c = 0; c < n; ++c) norms[c] = col_norm(j.b, c);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return norms[x] > norms[y]; });

  SvdResult out;
  out.sigma.resize(n);
  out.u = Matrix(m.rows, n);
  out.v = Matrix(n, n);
  for (int c = 0; c < n; ++c) {
    const int src = order[c];
    out.sigma[c] = norms[src];
    for (int i = 0; i < n; ++i) out.v(i, c) = j.v(i, src);
    if (norms[src] > 0.0) {
      for (int i = 0; i < m.rows; ++i) out.u(i, c) = j.b(i, src) / norms[src];
    }
  }
  for (int c = 0; c < n; ++c) {
    if (out.sigma[c] == 0.0) complete_column(out.u, c);
  }
  return out;
}

void apply_sign_convention(SvdResult& s) {
  for (int c = 0; c < s.u.cols; ++c) {
    double first = 0.0;
    for (int i = 0; i < s.u.rows; ++i) {
      if (s.u(i, c) != 0.0) {
        first = s.u(i, c);
        break;
      }
    }
    if (first < 0.0) {
      for (int i = 0; i < s.u.rows; ++i) s.u(i, c) = -s.u(i, c);
      for (int i = 0; i < s.v.rows; ++i) s.v(i, c) = -s.v(i, c);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.rows < 1 || m.cols < 1) throw std::invalid_argument("svd: empty matrix");
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      if (!std::isfinite(m(i, j)))
        throw std::invalid_argument("svd: non-finite entry at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
  SvdResult s;
  if (m.rows >= m.cols) {
    s = svd_tall(m);
  } else {
    SvdResult t = svd_tall(transpose(m));
    s.u = t.v;
    s.v = t.u;
    s.sigma = t.sigma;
  }
  apply_sign_convention(s);
  return s;
}

CondNumber condition_number(const SvdResult& s, int k_rank) {
  const int r = static_cast<int>(s.sigma.size());
  if (k_rank <= 0) k_rank = r;
  if (k_rank > r) throw std::invalid_argument("condition_number: k_rank exceeds min dimension");
  const double s1 = s.sigma[0];
  const double sk = s.sigma[k_rank - 1];
  CondNumber out;
  out.degenerate = sk < kKappaSigmaFloor;
  out.value = std::max(s1, kKappaSigmaFloor) / std::max(sk, kKappaSigmaFloor);
  return out;
}

CondNumber condition_number(const Matrix& m, int k_rank) {
  return condition_number(svd(m), k_rank);
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.a) s += x * x;
  return std::sqrt(s);
}

double softmax_entropy(const VecD& values) {
  if (values.empty()) return 0.0;
  const double mx = *std::max_element(values.begin(), values.end());
  double z = 0.0;
  for (double s : values) z += std::exp(s - mx);
  double h = 0.0;
  for (double s : values) {
    const double p = std::exp(s - mx) / z;
    h += p * std::log(p);
  }
  return h;
}

double singular_entropy(const Matrix& m) { return softmax_entropy(svd(m).sigma); }

SigmaGradient singular_value_gradient(const SvdResult& s, int index) {
  const int r = static_cast<int>(s.sigma.size());
  if (index < 0 || index >= r) throw std::invalid_argument("singular_value_gradient: index out of range");
  SigmaGradient out;
  const double scale_ref = std::max(s.sigma[0], kKappaSigmaFloor);
  out.tied = false;
  if (index > 0 && (s.sigma[index - 1] - s.sigma[index]) <= kSigmaTieTol * scale_ref) out.tied = true;
  if (index + 1 < r && (s.sigma[index] - s.sigma[index + 1]) <= kSigmaTieTol * scale_ref) out.tied = true;
  out.grad = Matrix(s.u.rows, s.v.rows);
  for (int i = 0; i < s.u.rows; ++i)
    for (int j = 0; j < s.v.rows; ++j) out.grad(i, j) = s.u(i, index) * s.v(j, index);
  return out;
}

SigmaGradient singular_value_gradient(const Matrix& m, int index) {
  return singular_value_gradient(svd(m), index);
}

std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      if (j) out += ',';
      out += format_g17(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix matrix_from_csv(const std::string& text) {
  std::vector<VecD> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    rows.push_back(parse_csv_doubles(line, line_no));
    if (rows.size() > 1 && rows.back().size() != rows.front().size()) {
      throw std::runtime_error("matrix_from_csv: ragged row at line " + std::to_string(line_no));
    }
  }
  if (rows.empty()) return Matrix();
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace smeta
