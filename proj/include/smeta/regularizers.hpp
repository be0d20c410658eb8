#pragma once

#include "smeta/linalg.hpp"

namespace smeta {

// Penalty weights for the regularized objective
//   lambda1 * kappa(W) + lambda2 * ||W||_F^2     (spectral penalty)
//   lambda_entropy * H_sigma(W)                  (entropy penalty)
struct PenaltyConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_entropy = 0.0;
  // Floor under sigma_k inside the penalty gradient; looser than the
  // condition-number readout floor because optimization needs bounded
  // gradients, not faithful ratios.
  double sigma_floor = 1e-8;
};

struct PenaltyResult {
  double value = 0.0;
  Matrix gradient;
  // sigma_k fell below sigma_floor: the kappa term's gradient is zeroed
  // (not floored) so a rank-collapsed W does not emit a 1e8-scale pull.
  bool degenerate = false;
};

// value    = lambda1 * sigma_1 / max(sigma_k, floor) + lambda2 * ||W||_F^2
// gradient = lambda1 * (u_1 v_1^T / sigma_k - (sigma_1 / sigma_k^2) u_k v_k^T)
//            + 2 * lambda2 * W
PenaltyResult spectral_penalty(const Matrix& w, const PenaltyConfig& cfg);

// value    = lambda_entropy * H_sigma(W),  H = sum_i p_i log p_i, p = softmax(sigma)
// gradient via dH/dsigma_j = p_j (log p_j - H) and dsigma_j/dW = u_j v_j^T.
PenaltyResult entropy_penalty(const Matrix& w, double lambda_entropy);

}  // namespace smeta
