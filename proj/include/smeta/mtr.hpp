#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smeta/linalg.hpp"
#include "smeta/rng.hpp"

namespace smeta {

// Ridge applied to every least-squares solve in this module (keeps the
// normal equations well-posed; rank trouble is flagged, not fatal).
inline constexpr double kMtrRidge = 1e-8;

// Shared linear representation phi(x) = B^T x.
struct LinearRepresentation {
  Matrix b;  // d x k, orthonormal columns (B^T B = I_k within 1e-8)
};

struct SourceTask {
  Matrix x;  // n1 x d
  Matrix y;  // n1 x 1
};

struct FitResult {
  LinearRepresentation rep;
  Matrix w;  // T x k, row t = coefficients of task t on top of B
  double objective = 0.0;              // mean squared loss over all samples
  std::vector<double> objective_history;  // one entry per completed round
  int rounds = 0;
  bool converged = false;
  bool rank_flagged = false;  // some solve or orthonormalization was rank-deficient
  bool monotone = true;       // objective never rose beyond the ridge-induced slack
};

// Alternating least squares for the shared representation: fix B and solve
// every task's coefficients in closed form, fix the coefficients and solve B
// in closed form, re-orthonormalize B (folding the triangular factor into W
// so predictions are unchanged), until the relative objective change drops
// below 1e-10 or 500 rounds pass. Requires sum of task samples >= d.
FitResult fit_source(const std::vector<SourceTask>& tasks, int k);

// Ridge least squares for a fresh task on the embedded features X B.
VecD fit_target(const LinearRepresentation& rep, const Matrix& x, const Matrix& y);

struct ExcessRiskEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n_montecarlo = 0;
};

// Monte-Carlo estimate of the population squared-loss gap between the fitted
// predictor x -> <B_hat w_hat, x> and the generating one, over x ~ N(0, I)
// with fresh label noise. The paired-sample estimator can dip slightly below
// zero; the true gap equals ||B_hat w_hat - B_star w_star||^2.
ExcessRiskEstimate excess_risk(const Matrix& b_hat, const VecD& w_hat, const Matrix& b_star,
                               const VecD& w_star, double noise_std, int n_mc, Rng& rng);

// Planted generating model: W* = U diag(spectrum) V^T with orthonormal
// random factors, so the task matrix has exactly the requested singular
// values; B* is a random orthonormal frame; the held-out task coefficient is
// standard Gaussian.
struct MtrProblem {
  Matrix b_star;  // d x k
  Matrix w_star;  // T x k
  VecD target_w;  // k
};

MtrProblem make_planted_problem(int d, int k, int T, const VecD& spectrum, Rng& rng);

std::vector<SourceTask> sample_source_tasks(const MtrProblem& problem, int n1, double noise_std,
                                            Rng& rng);
SourceTask sample_target_task(const MtrProblem& problem, int n2, double noise_std, Rng& rng);

// One full pipeline run: plant, sample, fit source + target, estimate the
// excess risk. Sub-streams are derived from the seed so that the planted
// problem, the target data, and the Monte-Carlo draws are identical across
// runs that differ only in n1 or in the planted spectrum (paired sweeps).
struct MtrRunConfig {
  int d = 10;
  int k = 3;
  int T = 20;
  int n1 = 50;
  int n2 = 40;
  double kappa_planted = 1.0;  // spectrum decays geometrically from 1 to 1/kappa
  double noise_std = 0.5;
  int n_mc = 20000;
};

struct SweepPoint {
  int n1 = 0;
  int T = 0;
  int k = 0;
  double kappa_planted = 1.0;
  uint64_t seed = 0;
  double er = 0.0;
  double er_se = 0.0;
};

VecD spectrum_for_kappa(int k, double kappa);

SweepPoint run_mtr_once(const MtrRunConfig& cfg, uint64_t seed);

// CSV with header n1,T,k,kappa_planted,seed,er,er_se and %.17g reals.
std::string sweep_to_csv(const std::vector<SweepPoint>& points);

}  // namespace smeta
