#pragma once

#include <functional>

#include "smeta/linalg.hpp"

// Independent brute-force verifiers. Nothing here calls the routines it is
// used to check: singular values come from a two-sided Jacobi
// eigendecomposition of the Gram matrix (a different algorithm and sweep
// order than the production SVD), least squares goes through explicitly
// formed normal equations and pivoted Gaussian elimination, and gradients
// come from central finite differences. Test-time quality: clear and slow,
// bounded to ~32x32 problems.
namespace smeta::oracle {

struct FdConfig {
  double h = 1e-5;  // 1e-5 for losses, 1e-6 for spectral functions
};

// Central-difference gradient of a scalar function of a matrix, entry by entry.
Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at,
                   const FdConfig& cfg = {});

std::vector<double> fd_gradient_vec(const std::function<double(const std::vector<double>&)>& f,
                                    const std::vector<double>& at, const FdConfig& cfg = {});

// Singular values of M via eigenvalues of the (smaller) Gram matrix,
// descending. Independent of smeta::svd.
std::vector<double> gram_svd(const Matrix& m);

// Eigen-decomposition of a symmetric matrix by cyclic two-sided Jacobi,
// reverse-lexicographic sweep order. Returns eigenvalues descending and the
// matching orthonormal eigenvectors as columns.
struct SymEig {
  std::vector<double> values;
  Matrix vectors;
};
SymEig jacobi_eigen_symmetric(const Matrix& g);

// argmin_w ||X w - y||^2 + ridge ||w||^2 via normal equations and Gaussian
// elimination with partial pivoting. y may have several columns.
Matrix least_squares(const Matrix& x, const Matrix& y, double ridge = 0.0);

// Straight-line multilayer perceptron evaluation in long double, layer
// weights given as out-by-in matrices, activation applied after every layer
// ("relu" | "tanh" | "identity"). Duplicates the production encoder on
// purpose so the two can be cross-checked.
std::vector<double> mlp_forward(const std::vector<Matrix>& weights,
                                const std::vector<Matrix>& biases,
                                const std::string& activation, const std::vector<double>& x);

// Excess squared-loss risk under x ~ N(0, I): || b_hat w_hat - b_star w_star ||^2.
double gaussian_risk_closed_form(const Matrix& b_hat, const VecD& w_hat, const Matrix& b_star,
                                 const VecD& w_star);

}  // namespace smeta::oracle
