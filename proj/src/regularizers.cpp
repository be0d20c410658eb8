#include "smeta/regularizers.hpp"

#include <cmath>
#include <stdexcept>

namespace smeta {

PenaltyResult spectral_penalty(const Matrix& w, const PenaltyConfig& cfg) {
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.sigma_floor <= 0.0) {
    throw std::invalid_argument("spectral_penalty: bad config");
  }
  PenaltyResult r;
  r.gradient = Matrix(w.rows, w.cols);
  if (cfg.lambda1 == 0.0 && cfg.lambda2 == 0.0) return r;

  if (cfg.lambda2 != 0.0) {
    const double fro = frobenius_norm(w);
    r.value += cfg.lambda2 * fro * fro;
    for (size_t i = 0; i < w.a.size(); ++i) r.gradient.a[i] = 2.0 * cfg.lambda2 * w.a[i];
  }

  if (cfg.lambda1 != 0.0) {
    const SvdResult s = svd(w);
    const int k = static_cast<int>(s.sigma.size());
    const double s1 = s.sigma.front();
    const double sk = s.sigma.back();
    r.value += cfg.lambda1 * s1 / std::max(sk, cfg.sigma_floor);
    if (sk < cfg.sigma_floor) {
      r.degenerate = true;  // kappa gradient zeroed, norm-term gradient kept
    } else {
      for (int i = 0; i < w.rows; ++i) {
        for (int j = 0; j < w.cols; ++j) {
          const double g1 = s.u(i, 0) * s.v(j, 0) / sk;
          const double gk = s.u(i, k - 1) * s.v(j, k - 1) * s1 / (sk * sk);
          r.gradient(i, j) += cfg.lambda1 * (g1 - gk);
        }
      }
    }
  }
  return r;
}

PenaltyResult entropy_penalty(const Matrix& w, double lambda_entropy) {
  if (lambda_entropy < 0.0) throw std::invalid_argument("entropy_penalty: negative weight");
  PenaltyResult r;
  r.gradient = Matrix(w.rows, w.cols);
  if (lambda_entropy == 0.0) return r;

  const SvdResult s = svd(w);
  const int k = static_cast<int>(s.sigma.size());

  // softmax over the singular values, max-shifted for stability
  double mx = s.sigma.front();
  double z = 0.0;
  VecD p(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    p[static_cast<size_t>(i)] = std::exp(s.sigma[static_cast<size_t>(i)] - mx);
    z += p[static_cast<size_t>(i)];
  }
  double h = 0.0;
  for (int i = 0; i < k; ++i) {
    p[static_cast<size_t>(i)] /= z;
    h += p[static_cast<size_t>(i)] * std::log(p[static_cast<size_t>(i)]);
  }
  r.value = lambda_entropy * h;

  for (int idx = 0; idx < k; ++idx) {
    const double coeff =
        lambda_entropy * p[static_cast<size_t>(idx)] *
        (std::log(p[static_cast<size_t>(idx)]) - h);
    if (coeff == 0.0) continue;
    for (int i = 0; i < w.rows; ++i)
      for (int j = 0; j < w.cols; ++j) r.gradient(i, j) += coeff * s.u(i, idx) * s.v(j, idx);
  }
  return r;
}

}  // namespace smeta
