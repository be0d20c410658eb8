#pragma once

#include <string>
#include <vector>

#include "smeta/encoder.hpp"
#include "smeta/linalg.hpp"
#include "smeta/rng.hpp"
#include "smeta/tasks.hpp"

namespace smeta {

// Whether the meta-gradient is differentiated through the inner adaptation
// (second) or the adapted parameters are treated as plain constants with an
// identity Jacobian back to the meta-parameters (first).
enum class MetaOrder { kFirst, kSecond };

MetaOrder meta_order_from_string(const std::string& name);
std::string meta_order_name(MetaOrder order);

// Meta-parameters: shared encoder plus a linear classification head. The head
// rows are the per-task predictors whose stacked matrix is what the spectral
// diagnostics and penalties look at.
struct ModelParams {
  EncoderParams encoder;
  Matrix head_w;  // n_way x k
  Matrix head_b;  // 1 x n_way
};

// Glorot-uniform encoder and head, zero biases. encoder_dims =
// {d, hidden..., k}; a single entry gives the identity encoder (head
// directly on the inputs).
ModelParams init_model(const std::vector<int>& encoder_dims, int n_way, Activation activation,
                       Rng& rng);

struct MamlConfig {
  double alpha = 0.01;  // inner (adaptation) rate
  double beta = 0.001;  // outer (meta) rate
  int inner_steps = 5;
  MetaOrder order = MetaOrder::kSecond;
  double lambda1 = 0.0;  // condition-number weight on the stacked adapted heads
  double lambda2 = 0.0;  // squared-Frobenius weight on the stacked adapted heads
  double sigma_floor = 1e-8;
};

// `steps` full-batch gradient-descent steps on the support cross-entropy.
// Value-copy semantics: the input is never mutated.
ModelParams inner_adapt(const ModelParams& params, const Episode& episode, int steps,
                        double alpha);

struct MamlMetrics {
  double query_loss = 0.0;  // mean adapted query cross-entropy over the batch
  double total_loss = 0.0;  // query_loss plus the stacked-head penalties
  double accuracy = 0.0;    // mean adapted query accuracy over the batch
  double kappa_wn = 0.0;    // condition number of the stacked adapted heads
  double frob_wn = 0.0;
  bool degenerate_wn = false;  // smallest singular value under the floor
  Matrix wn;                   // the stacked adapted head rows themselves
};

// One meta-update over an episode batch: adapt per episode, take the mean
// adapted query loss plus lambda1 * kappa(W_N) + lambda2 * ||W_N||_F^2 where
// W_N stacks the batch's adapted head rows (biases excluded), differentiate
// at the requested order, and apply one gradient step with rate beta.
// Metrics are measured at the pre-update parameters.
MamlMetrics outer_step(ModelParams& params, const std::vector<Episode>& batch,
                       const MamlConfig& cfg);

// Objective value the outer step descends (same adaptation, no update).
double maml_objective(const ModelParams& params, const std::vector<Episode>& batch,
                      const MamlConfig& cfg);

struct MamlEval {
  double query_loss = 0.0;
  double accuracy = 0.0;
};

// Adapted-query evaluation (the "test-time adaptation" read-out).
MamlEval evaluate_maml(const ModelParams& params, const Episode& episode, int inner_steps,
                       double alpha);

// ---------------------------------------------------------------------------
// Squared-loss regression path: a bias-free linear predictor w (1 x d) under
// mean-squared loss (1/2n) ||X w^T - y||^2, used to compare the generic
// machinery against the closed-form single-task recurrence.

struct RegressionEpisode {
  Matrix support_x;  // n1 x d
  Matrix support_y;  // n1 x 1
  Matrix query_x;    // n2 x d
  Matrix query_y;    // n2 x 1
};

double regression_loss(const Matrix& w, const Matrix& x, const Matrix& y);

Matrix inner_adapt_regression(const Matrix& w, const RegressionEpisode& episode, int steps,
                              double alpha);

struct RegressionStepResult {
  Matrix w;           // updated weights
  Matrix grad;        // outer gradient at the pre-update weights
  double query_loss;  // adapted query loss at the pre-update weights
};

RegressionStepResult outer_step_regression(const Matrix& w, const RegressionEpisode& episode,
                                           double alpha, double beta, int inner_steps,
                                           MetaOrder order);

// ---------------------------------------------------------------------------
// Closed-form single-task trajectory for the isotropic linear model: one
// inner step then one outer step per task collapses to
//   w_t = w_{t-1} - c (w_{t-1} - theta_t),   c = beta (1 - alpha)^2,
// the recurrence the condition-number simulation below iterates.

std::vector<VecD> linear_recurrence(const std::vector<VecD>& thetas, double alpha, double beta,
                                    const VecD& w0);

struct Prop1Step {
  int step = 0;        // i, pairing predictors (w_i, w_{i+1})
  Matrix theta_pair;   // [theta_i; theta_{i+1}], 2 x d
  Matrix w_pair;       // [w_i; w_{i+1}], 2 x d
  double kappa = 0.0;  // condition number of w_pair
  // sigma_2 <= 1e-6 * sigma_1 of w_pair: kappa is floor-dominated and only
  // its ordering as "effectively infinite" is meaningful.
  bool rank_deficient = false;
};

using Prop1Trace = std::vector<Prop1Step>;

// Iterates the recurrence from w_0 = 0 and records the spectrum of every
// consecutive-predictor pair.
Prop1Trace simulate_prop1(const std::vector<VecD>& thetas, double alpha, double beta);

// theta_1 scaled down each step by gamma (exactly colinear directions), the
// setting in which the paired condition number can only grow.
std::vector<VecD> colinear_thetas(int count, int d, double gamma, Rng& rng);

}  // namespace smeta
