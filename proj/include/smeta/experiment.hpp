#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smeta/config.hpp"
#include "smeta/diagnostics.hpp"
#include "smeta/maml.hpp"
#include "smeta/mtr.hpp"
#include "smeta/protonet.hpp"
#include "smeta/tasks.hpp"

namespace smeta {

// Worker cap from SPECTRAL_META_THREADS (absent -> 1). Execution in this
// build is sequential, so the cap is an upper bound that is always honored;
// a non-numeric or non-positive value raises std::invalid_argument.
int worker_cap();

// The four deterministic substreams of one run, derived from its seed:
// family construction, parameter init, training episodes, eval episodes.
// Training episode i draws from Rng(split_seed(streams.train, i)), eval
// episode i from Rng(split_seed(streams.eval, i)). Paired runs (same seed,
// different method flags) therefore see identical tasks and identical
// parameter draws.
struct RunStreams {
  uint64_t family = 0;
  uint64_t init = 0;
  uint64_t train = 0;
  uint64_t eval = 0;
};

RunStreams run_streams(uint64_t run_seed);

// One completed training run: the per-step measurement trace, the episode
// archive it consumed, the final parameters, the frozen-model conditioning
// recomputed over the archive, and a fresh-episode evaluation.
struct TrainResult {
  uint64_t run_seed = 0;
  Trace trace;
  EpisodeArchive archive;
  EncoderParams encoder;  // final encoder (both methods)
  ModelParams model;      // adapted-head method; empty for the prototype method
  GlobalKappa global;
  double eval_accuracy = 0.0;
  double eval_loss = 0.0;
};

// Prototype method: one episode per step, Adam on the encoder, trace rows
// carry the scoring prototypes (unit-row exact when normalization is on).
// The step column counts episodes consumed at measurement time.
TrainResult train_protonet(const RunConfig& cfg, uint64_t run_seed);

// Adapted-head method: `batch` episodes per outer step, plain gradient outer
// updates, trace rows carry the stacked adapted head matrix; the step column
// counts episodes consumed so both methods share an episode axis.
TrainResult train_maml(const RunConfig& cfg, uint64_t run_seed);

TrainResult train_run(const RunConfig& cfg, uint64_t run_seed);

// How many archived episodes the frozen-model conditioning replays.
inline constexpr int kGlobalKappaSamples = 500;

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * standard error
  int n = 0;
};

MeanCi mean_ci(const std::vector<double>& xs);

// Full-model checkpoint (encoder block + head matrices); parse round-trips.
std::string model_to_checkpoint(const ModelParams& m);
ModelParams model_from_checkpoint(const std::string& text);

// ---------------------------------------------------------------------------
// Colinear-sequence conditioning study: for every (gamma, d, seed) cell the
// single-task trajectory is simulated and the condition numbers of
// consecutive-predictor pairs are checked for monotone growth, ordering
// rank-deficient steps as +infinity.

struct Prop1Cell {
  double gamma = 1.0;
  int d = 2;
  uint64_t seed = 0;
  Prop1Trace trace;
  bool monotone = true;
  int flagged_steps = 0;
};

struct Prop1Study {
  std::vector<Prop1Cell> cells;
  bool all_monotone = true;
};

// True when the sequence is non-decreasing with `slack` tolerance, treating
// rank-deficient entries as +infinity (so finite-after-flagged is a
// violation). Reports the flagged count through `flagged` when non-null.
bool effective_kappa_monotone(const Prop1Trace& trace, double slack = 1e-12,
                              int* flagged = nullptr);

Prop1Study run_prop1_study(const std::vector<double>& gammas, const std::vector<int>& dims,
                           int seeds, int steps, double alpha, double beta);

// CSV: gamma,d,seed,step,kappa,rank_deficient
std::string prop1_to_csv(const Prop1Study& study);

// ---------------------------------------------------------------------------
// Two-task construction study: numeric conditioning of both factorizations
// against their closed forms, plus the data-fit residual of the as-written
// and corrected point sets.

struct Prop3Row {
  double epsilon = 0.0;
  double kappa_wstar_numeric = 0.0;
  double kappa_wstar_expected = 0.0;  // 1 / epsilon
  double kappa_what_numeric = 0.0;
  double kappa_what_closed = 0.0;
  double residual_verbatim = 0.0;   // max |<w, phi^T x> - y|, as-written points
  double residual_corrected = 0.0;  // same after the sign correction
};

struct Prop3Study {
  std::vector<Prop3Row> rows;
  bool kappa_star_ok = true;     // |numeric - 1/eps| <= 1e-9 on every row
  bool kappa_hat_ok = true;      // |numeric - closed| <= 1e-9 on every row
  bool monotone_to_one = true;   // kappa_hat decreases toward 1 as eps drops
};

// kappa of [[0,1],[1,-eps]]: sqrt of the eigenvalue ratio of its 2x2 Gram,
// lambda = (2 + eps^2 +- eps * sqrt(4 + eps^2)) / 2.
double prop3_kappa_hat_closed_form(double epsilon);

// epsilons must be listed in decreasing order.
Prop3Study run_prop3_study(const std::vector<double>& epsilons);

// CSV: epsilon,kappa_wstar,kappa_wstar_expected,kappa_what,kappa_what_closed,
//      residual_verbatim,residual_corrected
std::string prop3_to_csv(const Prop3Study& study);

// ---------------------------------------------------------------------------
// Paired prototype-method study: per seed, one normalized and one
// unnormalized run on identical tasks and init; compares the frozen-encoder
// conditioning of the two scoring predictor stacks.

struct Theorem1Seed {
  uint64_t seed = 0;
  double kappa_normalized = 0.0;
  double kappa_unnormalized = 0.0;
  bool frob_exact = true;  // every normalized trace row has frob == sqrt(n_way)
  double acc_normalized = 0.0;
  double acc_unnormalized = 0.0;
};

struct Theorem1Study {
  std::vector<Theorem1Seed> seeds;
  int normalized_wins = 0;  // kappa_normalized <= kappa_unnormalized
  bool all_frob_exact = true;
};

Theorem1Study run_theorem1_study(const RunConfig& cfg);

// CSV: seed,kappa_normalized,kappa_unnormalized,frob_exact,acc_normalized,
//      acc_unnormalized
std::string theorem1_to_csv(const Theorem1Study& study);

// ---------------------------------------------------------------------------
// Paired adapted-head study: per seed, one unregularized and one regularized
// run (identical tasks and init); feeds both the conditioning-containment
// comparison and the accuracy non-inferiority comparison.

struct MamlComparisonSeed {
  uint64_t seed = 0;
  double max_kappa_unreg = 0.0;  // max over the trace; degenerate -> +inf
  double max_kappa_reg = 0.0;
  bool reg_norm_bounded = true;  // frob <= 2x its episode-50 value afterward
  double acc_unreg = 0.0;
  double acc_reg = 0.0;
};

struct MamlComparisonStudy {
  std::vector<MamlComparisonSeed> seeds;
  int unreg_kappa_wins = 0;  // max_kappa_unreg > max_kappa_reg
  bool all_reg_norm_bounded = true;
  MeanCi acc_diff;  // regularized - unregularized, in accuracy fractions
};

// base.method must be the adapted-head method; base.lambda1/lambda2 define
// the regularized arm, the unregularized arm forces both to zero.
MamlComparisonStudy run_maml_comparison_study(const RunConfig& base);

// CSV: seed,max_kappa_unreg,max_kappa_reg,reg_norm_bounded,acc_unreg,acc_reg
std::string maml_comparison_to_csv(const MamlComparisonStudy& study);

// ---------------------------------------------------------------------------
// Finite-difference audit of every analytic gradient path.

struct GradCheck {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

std::vector<GradCheck> run_gradcheck_suite();

// ---------------------------------------------------------------------------
// Linear multi-task pipeline study: noiseless recovery, sample-count sweep,
// planted-conditioning sweep, each over paired seeds.

struct MtrStudy {
  std::vector<SweepPoint> noiseless;
  std::vector<SweepPoint> n1_sweep;     // n1 in {5, 20, 80}
  std::vector<SweepPoint> kappa_sweep;  // planted kappa in {1, 10, 100}
  double noiseless_max_er = 0.0;
  std::vector<double> n1_medians;
  std::vector<double> kappa_medians;
  bool noiseless_ok = false;
  bool n1_decreasing = false;
  bool kappa_non_decreasing = false;
};

MtrStudy run_mtr_study(int seeds, int n_mc);

}  // namespace smeta
