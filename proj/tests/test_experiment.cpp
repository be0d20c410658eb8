#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "smeta/experiment.hpp"
#include "smeta/oracle.hpp"

using smeta::Matrix;
using smeta::RunConfig;
using smeta::RunMethod;

namespace {

RunConfig tiny_protonet() {
  RunConfig cfg;
  cfg.method = RunMethod::kProtonet;
  cfg.episodes = 30;
  cfg.eval_episodes = 16;
  return cfg;
}

RunConfig tiny_maml() {
  RunConfig cfg;
  cfg.method = RunMethod::kMaml;
  cfg.episodes = 24;
  cfg.batch = 4;
  cfg.eval_episodes = 10;
  cfg.inner_steps_train = 3;
  cfg.inner_steps_eval = 5;
  return cfg;
}

bool same_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) return false;
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j)
      if (a(i, j) != b(i, j)) return false;
  return true;
}

}  // namespace

TEST_CASE("worker cap reads the environment and rejects garbage") {
  unsetenv("SPECTRAL_META_THREADS");
  CHECK(smeta::worker_cap() == 1);
  setenv("SPECTRAL_META_THREADS", "4", 1);
  CHECK(smeta::worker_cap() == 4);
  setenv("SPECTRAL_META_THREADS", "999999", 1);
  CHECK(smeta::worker_cap() == 1024);
  for (const char* bad : {"0", "-2", "abc", "4x"}) {
    setenv("SPECTRAL_META_THREADS", bad, 1);
    CHECK_THROWS_AS((void)smeta::worker_cap(), std::invalid_argument);
  }
  unsetenv("SPECTRAL_META_THREADS");
}

TEST_CASE("run seed splits into four distinct deterministic streams") {
  const smeta::RunStreams a = smeta::run_streams(42);
  const smeta::RunStreams b = smeta::run_streams(42);
  CHECK(a.family == b.family);
  CHECK(a.train == b.train);
  CHECK(a.family == smeta::split_seed(42, 1));
  CHECK(a.init == smeta::split_seed(42, 2));
  CHECK(a.train == smeta::split_seed(42, 3));
  CHECK(a.eval == smeta::split_seed(42, 4));
  const smeta::RunStreams c = smeta::run_streams(43);
  CHECK(a.family != c.family);
  CHECK(a.train != c.train);
}

TEST_CASE("mean with confidence half-width") {
  smeta::MeanCi empty = smeta::mean_ci({});
  CHECK(empty.n == 0);
  CHECK(empty.mean == 0.0);
  smeta::MeanCi one = smeta::mean_ci({3.5});
  CHECK(one.n == 1);
  CHECK(one.mean == 3.5);
  CHECK(one.half_width == 0.0);
  smeta::MeanCi four = smeta::mean_ci({1.0, 2.0, 3.0, 4.0});
  CHECK(four.n == 4);
  CHECK(four.mean == doctest::Approx(2.5));
  // sample variance 5/3, standard error sqrt(5/12)
  CHECK(four.half_width == doctest::Approx(1.96 * std::sqrt(5.0 / 12.0)).epsilon(1e-12));
}

TEST_CASE("prototype training produces a full deterministic trace") {
  const RunConfig cfg = tiny_protonet();
  smeta::TrainResult r = smeta::train_protonet(cfg, 11);
  CHECK(r.run_seed == 11);
  CHECK(r.trace.size() == 30);
  CHECK(r.archive.size() == 30);
  CHECK(r.archive.family_seed == smeta::run_streams(11).family);
  for (size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(r.trace.records()[i].step == static_cast<int>(i) + 1);
  }
  CHECK(r.eval_accuracy >= 0.0);
  CHECK(r.eval_accuracy <= 1.0);
  CHECK(r.global.episodes_used == 30);
  CHECK(r.global.kappa >= 1.0);
  CHECK(r.model.head_w.rows == 0);  // prototype method carries no head

  smeta::TrainResult again = smeta::train_protonet(cfg, 11);
  CHECK(smeta::trace_to_csv(r.trace.records()) == smeta::trace_to_csv(again.trace.records()));
  CHECK(r.eval_accuracy == again.eval_accuracy);
  CHECK(r.eval_loss == again.eval_loss);
  CHECK(r.global.kappa == again.global.kappa);
}

TEST_CASE("normalized prototype rows record the exact norm") {
  RunConfig cfg = tiny_protonet();
  cfg.normalize = true;
  smeta::TrainResult r = smeta::train_run(cfg, 5);
  const double expect = std::sqrt(static_cast<double>(cfg.n_way));
  for (const smeta::TraceRecord& rec : r.trace.records()) {
    CHECK(rec.frob_wn == expect);  // bitwise, by construction
    CHECK(rec.kappa_wn >= 1.0);
  }
}

TEST_CASE("paired flags see identical tasks") {
  RunConfig raw = tiny_protonet();
  RunConfig norm = tiny_protonet();
  norm.normalize = true;
  smeta::TrainResult a = smeta::train_protonet(raw, 9);
  smeta::TrainResult b = smeta::train_protonet(norm, 9);
  REQUIRE(a.archive.size() == b.archive.size());
  for (size_t i = 0; i < a.archive.size(); ++i) {
    CHECK(a.archive.entries[i].seed == b.archive.entries[i].seed);
    CHECK(a.archive.entries[i].fingerprint == b.archive.entries[i].fingerprint);
  }
}

TEST_CASE("adapted-head training steps count episodes consumed") {
  const RunConfig cfg = tiny_maml();
  smeta::TrainResult r = smeta::train_maml(cfg, 17);
  CHECK(r.trace.size() == 6);
  CHECK(r.archive.size() == 24);
  for (size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(r.trace.records()[i].step == static_cast<int>(i + 1) * cfg.batch);
  }
  CHECK(r.model.head_w.rows == cfg.n_way);
  CHECK(r.model.head_w.cols == cfg.embed_dim);
  CHECK(r.model.head_b.rows == 1);
  CHECK(r.model.head_b.cols == cfg.n_way);
  CHECK(r.global.episodes_used == 24);

  smeta::TrainResult again = smeta::train_run(cfg, 17);
  CHECK(smeta::trace_to_csv(r.trace.records()) == smeta::trace_to_csv(again.trace.records()));
  CHECK(r.eval_accuracy == again.eval_accuracy);
  CHECK(same_matrix(r.model.head_w, again.model.head_w));
}

TEST_CASE("training rejects mismatched method selections") {
  CHECK_THROWS_AS((void)smeta::train_maml(tiny_protonet(), 1), std::invalid_argument);
  CHECK_THROWS_AS((void)smeta::train_protonet(tiny_maml(), 1), std::invalid_argument);
  RunConfig short_run = tiny_maml();
  short_run.episodes = 3;  // below one batch
  CHECK_THROWS_AS((void)smeta::train_maml(short_run, 1), std::invalid_argument);
}

TEST_CASE("model checkpoints round-trip and reject truncation") {
  smeta::Rng rng(77);
  smeta::ModelParams m = smeta::init_model({6, 4}, 3, smeta::Activation::kTanh, rng);
  const std::string text = smeta::model_to_checkpoint(m);
  smeta::ModelParams back = smeta::model_from_checkpoint(text);
  CHECK(same_matrix(back.head_w, m.head_w));
  CHECK(same_matrix(back.head_b, m.head_b));
  CHECK(smeta::serialize_encoder(back.encoder) == smeta::serialize_encoder(m.encoder));

  CHECK_THROWS_AS((void)smeta::model_from_checkpoint("wrong-marker\n"), std::runtime_error);
  const std::string cut = text.substr(0, text.find("head_b"));
  CHECK_THROWS_AS((void)smeta::model_from_checkpoint(cut), std::runtime_error);
  std::string mismatched = text;
  mismatched.replace(mismatched.rfind("head_b"), std::string::npos,
                     "head_b\n1.0,2.0\n");  // 1x2 bias against a 3-row head
  CHECK_THROWS_AS((void)smeta::model_from_checkpoint(mismatched), std::runtime_error);
}

TEST_CASE("effective conditioning monotonicity treats flagged steps as infinite") {
  auto make = [](std::vector<double> kappas, std::vector<int> flagged_at) {
    smeta::Prop1Trace t(kappas.size());
    for (size_t i = 0; i < kappas.size(); ++i) {
      t[i].step = static_cast<int>(i + 1);
      t[i].kappa = kappas[i];
    }
    for (int i : flagged_at) t[static_cast<size_t>(i)].rank_deficient = true;
    return t;
  };
  int flagged = -1;
  CHECK(smeta::effective_kappa_monotone(make({1.0, 2.0, 3.0}, {}), 1e-12, &flagged));
  CHECK(flagged == 0);
  CHECK(smeta::effective_kappa_monotone(make({2.0, 2.0 - 1e-13}, {}), 1e-12));
  CHECK(!smeta::effective_kappa_monotone(make({2.0, 1.0}, {}), 1e-12));
  CHECK(smeta::effective_kappa_monotone(make({3.0, 0.0}, {1}), 1e-12, &flagged));
  CHECK(flagged == 1);
  CHECK(!smeta::effective_kappa_monotone(make({0.0, 7.0}, {0}), 1e-12));
  CHECK(smeta::effective_kappa_monotone(make({0.0, 0.0}, {0, 1}), 1e-12, &flagged));
  CHECK(flagged == 2);
}

TEST_CASE("colinear-sequence study covers its grid and reports monotone growth") {
  smeta::Prop1Study study = smeta::run_prop1_study({2.0}, {2}, 3, 10, 0.1, 0.05);
  REQUIRE(study.cells.size() == 3);
  bool all = true;
  for (const smeta::Prop1Cell& cell : study.cells) {
    CHECK(cell.trace.size() == 9);  // one row per consecutive pair
    CHECK(cell.gamma == 2.0);
    CHECK(cell.d == 2);
    all = all && cell.monotone;
  }
  CHECK(study.all_monotone == all);
  CHECK(study.all_monotone);

  const std::string csv = smeta::prop1_to_csv(study);
  CHECK(csv.rfind("gamma,d,seed,step,kappa,rank_deficient\n", 0) == 0);
  size_t lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + 3 * 9);

  CHECK_THROWS_AS((void)smeta::run_prop1_study({}, {2}, 1, 10, 0.1, 0.05), std::invalid_argument);
  CHECK_THROWS_AS((void)smeta::run_prop1_study({1.0}, {2}, 1, 1, 0.1, 0.05),
                  std::invalid_argument);
}

TEST_CASE("two-task construction study matches its closed forms") {
  smeta::Prop3Study study = smeta::run_prop3_study({0.5, 0.1, 0.02, 0.001});
  REQUIRE(study.rows.size() == 4);
  CHECK(study.kappa_star_ok);
  CHECK(study.kappa_hat_ok);
  CHECK(study.monotone_to_one);
  const double eps_list[] = {0.5, 0.1, 0.02, 0.001};
  for (size_t i = 0; i < 4; ++i) {
    const smeta::Prop3Row& row = study.rows[i];
    const double eps = eps_list[i];
    CHECK(row.epsilon == eps);
    CHECK(row.kappa_wstar_expected == doctest::Approx(1.0 / eps).epsilon(1e-15));
    // data-fit residual of the as-written points is 2 + 4*eps, corrected is 0
    CHECK(row.residual_verbatim == doctest::Approx(2.0 + 4.0 * eps).epsilon(1e-12));
    CHECK(row.residual_corrected == doctest::Approx(0.0));

    // independent numeric route for the closed form
    Matrix what(2, 2);
    what(0, 0) = 0.0;
    what(0, 1) = 1.0;
    what(1, 0) = 1.0;
    what(1, 1) = -eps;
    const std::vector<double> sigma = smeta::oracle::gram_svd(what);
    const double numeric = sigma.front() / sigma.back();
    CHECK(smeta::prop3_kappa_hat_closed_form(eps) == doctest::Approx(numeric).epsilon(1e-12));
  }
  CHECK(smeta::prop3_kappa_hat_closed_form(0.0) == doctest::Approx(1.0));

  const std::string csv = smeta::prop3_to_csv(study);
  CHECK(csv.rfind("epsilon,kappa_wstar,kappa_wstar_expected,kappa_what,kappa_what_closed,"
                  "residual_verbatim,residual_corrected\n",
                  0) == 0);

  CHECK_THROWS_AS((void)smeta::run_prop3_study({0.1, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS((void)smeta::run_prop3_study({}), std::invalid_argument);
}

TEST_CASE("paired normalization study structure and determinism") {
  RunConfig cfg = tiny_protonet();
  cfg.episodes = 40;
  cfg.eval_episodes = 10;
  cfg.seed = 7;
  cfg.seeds = 2;
  smeta::Theorem1Study study = smeta::run_theorem1_study(cfg);
  REQUIRE(study.seeds.size() == 2);
  CHECK(study.seeds[0].seed == 7);
  CHECK(study.seeds[1].seed == 8);
  CHECK(study.all_frob_exact);
  int wins = 0;
  for (const smeta::Theorem1Seed& s : study.seeds) {
    CHECK(s.kappa_normalized >= 1.0);
    CHECK(s.kappa_unnormalized >= 1.0);
    if (s.kappa_normalized <= s.kappa_unnormalized) ++wins;
  }
  CHECK(study.normalized_wins == wins);

  const std::string csv = smeta::theorem1_to_csv(study);
  CHECK(csv.rfind("seed,kappa_normalized,kappa_unnormalized,frob_exact,acc_normalized,"
                  "acc_unnormalized\n",
                  0) == 0);
  CHECK(csv == smeta::theorem1_to_csv(smeta::run_theorem1_study(cfg)));
}

TEST_CASE("paired regularization study structure and determinism") {
  RunConfig base = tiny_maml();
  base.episodes = 16;
  base.lambda1 = 1.0;
  base.lambda2 = 1.0;
  base.seed = 3;
  base.seeds = 2;
  smeta::MamlComparisonStudy study = smeta::run_maml_comparison_study(base);
  REQUIRE(study.seeds.size() == 2);
  CHECK(study.acc_diff.n == 2);
  int wins = 0;
  for (const smeta::MamlComparisonSeed& s : study.seeds) {
    CHECK(s.max_kappa_unreg >= 1.0);
    CHECK(s.max_kappa_reg >= 1.0);
    if (s.max_kappa_unreg > s.max_kappa_reg) ++wins;
  }
  CHECK(study.unreg_kappa_wins == wins);

  const std::string csv = smeta::maml_comparison_to_csv(study);
  CHECK(csv.rfind("seed,max_kappa_unreg,max_kappa_reg,reg_norm_bounded,acc_unreg,acc_reg\n", 0) ==
        0);
  CHECK(csv == smeta::maml_comparison_to_csv(smeta::run_maml_comparison_study(base)));

  RunConfig wrong = tiny_protonet();
  CHECK_THROWS_AS((void)smeta::run_maml_comparison_study(wrong), std::invalid_argument);
}

TEST_CASE("gradient audit suite passes every path") {
  const std::vector<smeta::GradCheck> checks = smeta::run_gradcheck_suite();
  REQUIRE(checks.size() == 6);
  for (const smeta::GradCheck& c : checks) {
    CAPTURE(c.name);
    CHECK(!c.name.empty());
    CHECK(c.max_rel_err <= c.tolerance);
    CHECK(c.pass);
  }
}

TEST_CASE("linear multi-task study reports its sweeps") {
  smeta::MtrStudy study = smeta::run_mtr_study(3, 2000);
  CHECK(study.noiseless.size() == 3);
  CHECK(study.n1_sweep.size() == 9);
  CHECK(study.kappa_sweep.size() == 9);
  REQUIRE(study.n1_medians.size() == 3);
  REQUIRE(study.kappa_medians.size() == 3);
  CHECK(study.noiseless_ok);
  CHECK(study.noiseless_max_er <= 1e-6);
  CHECK(study.n1_decreasing);  // 5 -> 20 -> 80 samples shrink the risk sharply
  for (double m : study.n1_medians) CHECK(m >= 0.0);
  CHECK_THROWS_AS((void)smeta::run_mtr_study(0, 2000), std::invalid_argument);
}
