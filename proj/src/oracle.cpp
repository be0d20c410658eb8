#include "smeta/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace smeta::oracle {

Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at,
                   const FdConfig& cfg) {
  Matrix grad(at.rows, at.cols);
  Matrix x = at;
  for (int i = 0; i < at.rows; ++i) {
    for (int j = 0; j < at.cols; ++j) {
      const double orig = x(i, j);
      x(i, j) = orig + cfg.h;
      const double fp = f(x);
      x(i, j) = orig - cfg.h;
      const double fm = f(x);
      x(i, j) = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("fd_gradient: non-finite evaluation");
      }
      grad(i, j) = (fp - fm) / (2.0 * cfg.h);
    }
  }
  return grad;
}

std::vector<double> fd_gradient_vec(const std::function<double(const std::vector<double>&)>& f,
                                    const std::vector<double>& at, const FdConfig& cfg) {
  std::vector<double> grad(at.size());
  std::vector<double> x = at;
  for (size_t i = 0; i < at.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + cfg.h;
    const double fp = f(x);
    x[i] = orig - cfg.h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("fd_gradient_vec: non-finite evaluation");
    }
    grad[i] = (fp - fm) / (2.0 * cfg.h);
  }
  return grad;
}

SymEig jacobi_eigen_symmetric(const Matrix& g_in) {
  if (g_in.rows != g_in.cols) throw std::invalid_argument("jacobi_eigen_symmetric: not square");
  const int n = g_in.rows;
  Matrix g = g_in;
  Matrix vec = Matrix::identity(n);
  const double tol = 1e-15;
  const int max_sweeps = 80;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    // Reverse-lexicographic pair order -- deliberately different from the
    // production SVD's forward sweep.
    for (int q = n - 1; q >= 1; --q) {
      for (int p = q - 1; p >= 0; --p) {
        const double gpq = g(p, q);
        const double scale = std::sqrt(std::fabs(g(p, p) * g(q, q))) + std::fabs(gpq);
        if (gpq == 0.0 || std::fabs(gpq) <= tol * scale) continue;
        const double theta = (g(q, q) - g(p, p)) / (2.0 * gpq);
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < n; ++i) {
          const double gip = g(i, p), giq = g(i, q);
          g(i, p) = c * gip - s * giq;
          g(i, q) = s * gip + c * giq;
        }
        for (int i = 0; i < n; ++i) {
          const double gpi = g(p, i), gqi = g(q, i);
          g(p, i) = c * gpi - s * gqi;
          g(q, i) = s * gpi + c * gqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = vec(i, p), vq = vec(i, q);
          vec(i, p) = c * vp - s * vq;
          vec(i, q) = s * vp + c * vq;
        }
        rotated = true;
      }
    }
    if (!rotated) break;
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return g(a, a) > g(b, b); });
  SymEig out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (int c = 0; c < n; ++c) {
    out.values[c] = g(order[c], order[c]);
    for (int i = 0; i < n; ++i) out.vectors(i, c) = vec(i, order[c]);
  }
  return out;
}

std::vector<double> gram_svd(const Matrix& m) {
  // Gram matrix on the smaller side; sigma_i(M)^2 = lambda_i(Gram).
  Matrix gram;
  if (m.rows <= m.cols) {
    gram = Matrix(m.rows, m.rows);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.rows; ++j) {
        double s = 0.0;
        for (int k = 0; k < m.cols; ++k) s += m(i, k) * m(j, k);
        gram(i, j) = s;
      }
  } else {
    gram = Matrix(m.cols, m.cols);
    for (int i = 0; i < m.cols; ++i)
      for (int j = 0; j < m.cols; ++j) {
        double s = 0.0;
        for (int k = 0; k < m.rows; ++k) s += m(k, i) * m(k, j);
        gram(i, j) = s;
      }
  }
  SymEig eig = jacobi_eigen_symmetric(gram);
  std::vector<double> sigma(eig.values.size());
  for (size_t i = 0; i < sigma.size(); ++i) sigma[i] = std::sqrt(std::max(eig.values[i], 0.0));
  return sigma;
}

namespace {

// Solve A x = b in place by Gaussian elimination with partial pivoting.
Matrix solve_pivoted(Matrix a, Matrix b) {
  const int n = a.rows;
  if (a.cols != n || b.rows != n) throw std::invalid_argument("solve_pivoted: shape mismatch");
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) throw std::runtime_error("solve_pivoted: singular system");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      for (int c = 0; c < b.cols; ++c) std::swap(b(col, c), b(piv, c));
    }
    const double d = a(col, col);
    for (int r = col + 1; r < n; ++r) {
      const double f = a(r, col) / d;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (int c = 0; c < b.cols; ++c) b(r, c) -= f * b(col, c);
    }
  }
  Matrix x(n, b.cols);
  for (int r = n - 1; r >= 0; --r) {
    for (int c = 0; c < b.cols; ++c) {
      double s = b(r, c);
      for (int k = r + 1; k < n; ++k) s -= a(r, k) * x(k, c);
      x(r, c) = s / a(r, r);
    }
  }
  return x;
}

}  // namespace

Matrix least_squares(const Matrix& x, const Matrix& y, double ridge) {
  if (x.rows != y.rows) throw std::invalid_argument("least_squares: row mismatch");
  const int n = x.cols;
  Matrix normal(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < x.rows; ++k) s += x(k, i) * x(k, j);
      normal(i, j) = s;
    }
  for (int i = 0; i < n; ++i) normal(i, i) += ridge;
  Matrix rhs(n, y.cols);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < y.cols; ++c) {
      double s = 0.0;
      for (int k = 0; k < x.rows; ++k) s += x(k, i) * y(k, c);
      rhs(i, c) = s;
    }
  return solve_pivoted(normal, rhs);
}

double gaussian_risk_closed_form(const Matrix& b_hat, const VecD& w_hat, const Matrix& b_star,
                                 const VecD& w_star) {
  if (b_hat.rows != b_star.rows) throw std::invalid_argument("gaussian_risk: ambient dim mismatch");
  double out = 0.0;
  for (int i = 0; i < b_hat.rows; ++i) {
    double lhs = 0.0;
    for (int j = 0; j < b_hat.cols; ++j) lhs += b_hat(i, j) * w_hat[j];
    double rhs = 0.0;
    for (int j = 0; j < b_star.cols; ++j) rhs += b_star(i, j) * w_star[j];
    const double d = lhs - rhs;
    out += d * d;
  }
  return out;
}

std::vector<double> mlp_forward(const std::vector<Matrix>& weights,
                                const std::vector<Matrix>& biases,
                                const std::string& activation, const std::vector<double>& x) {
  if (weights.size() != biases.size()) throw std::invalid_argument("mlp_forward: layer mismatch");
  std::vector<long double> h(x.begin(), x.end());
  for (size_t l = 0; l < weights.size(); ++l) {
    const Matrix& w = weights[l];
    const Matrix& b = biases[l];
    if (static_cast<size_t>(w.cols) != h.size()) {
      throw std::invalid_argument("mlp_forward: width mismatch at layer " + std::to_string(l));
    }
    std::vector<long double> z(static_cast<size_t>(w.rows));
    for (int i = 0; i < w.rows; ++i) {
      long double acc = b(0, i);
      for (int j = 0; j < w.cols; ++j) acc += static_cast<long double>(w(i, j)) * h[j];
      if (activation == "relu") {
        z[i] = acc > 0.0L ? acc : 0.0L;
      } else if (activation == "tanh") {
        z[i] = tanhl(acc);
      } else if (activation == "identity") {
        z[i] = acc;
      } else {
        throw std::invalid_argument("mlp_forward: unknown activation " + activation);
      }
    }
    h = std::move(z);
  }
  return std::vector<double>(h.begin(), h.end());
}

}  // namespace smeta::oracle

