#include "smeta/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smeta/experiment.hpp"

namespace fs = std::filesystem;

namespace smeta {

namespace {

// Monte-Carlo sample count for the linear multi-task risk estimates.
constexpr int kMtrMonteCarlo = 20000;

// The colinear-sequence grid the prop1 command always runs.
const std::vector<double> kProp1Gammas = {0.25, 0.5, 1.0, 2.0, 4.0};
const std::vector<int> kProp1Dims = {2, 5, 10};
constexpr int kProp1Steps = 50;

// The epsilon schedule the prop3 command always runs (strictly decreasing).
const std::vector<double> kProp3Epsilons = {0.5, 0.1, 0.02, 0.001};

std::string real_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

std::string short_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::string(buf);
}

// Collects PASS/FAIL/REPORT lines and the machine-readable failure list; the
// exit code of every command is derived from it.
class CheckList {
 public:
  CheckList(std::string command, std::ostream& out) : command_(std::move(command)), out_(out) {}

  void check(bool ok, const std::string& name, const std::string& fail_detail) {
    if (ok) {
      out_ << "PASS: " << name << "\n";
    } else {
      fail(name, fail_detail);
    }
  }

  void fail(const std::string& name, const std::string& detail) {
    out_ << "FAIL: " << name << " (" << detail << ")\n";
    failures_.push_back({{"check", name}, {"detail", detail}});
  }

  void report(const std::string& text) { out_ << "REPORT: " << text << "\n"; }

  int finish() {
    nlohmann::json status;
    status["command"] = command_;
    status["failures"] = failures_;
    out_ << status.dump() << "\n";
    return failures_.empty() ? 0 : 1;
  }

 private:
  std::string command_;
  std::ostream& out_;
  nlohmann::json failures_ = nlohmann::json::array();
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

// -------------------------------------------------------------------------

void cmd_train(const RunConfig& cfg, CheckList& checks) {
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  write_text(dir / "config.txt", config_to_string(cfg));

  std::vector<double> accs, losses, final_kappas, max_kappas;
  std::string summary_csv = "seed,eval_accuracy,eval_loss,global_kappa_w,max_kappa_wn,degenerate_steps\n";
  for (int i = 0; i < cfg.seeds; ++i) {
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(i);
    const std::string tag = std::to_string(seed);
    TrainResult r = train_run(cfg, seed);

    write_text(dir / ("trace_" + tag + ".csv"), trace_to_csv(r.trace.records()));
    write_text(dir / ("archive_" + tag + ".csv"), archive_to_csv(r.archive));
    const std::string checkpoint = cfg.method == RunMethod::kMaml
                                       ? model_to_checkpoint(r.model)
                                       : serialize_encoder(r.encoder);
    write_text(dir / ("checkpoint_" + tag + ".txt"), checkpoint);

    double max_kappa = 0.0;
    int degenerate = 0;
    for (const TraceRecord& rec : r.trace.records()) {
      max_kappa = std::max(max_kappa, rec.kappa_wn);
      if (rec.degenerate) ++degenerate;
    }
    accs.push_back(r.eval_accuracy);
    losses.push_back(r.eval_loss);
    final_kappas.push_back(r.global.kappa);
    max_kappas.push_back(max_kappa);

    char row[256];
    std::snprintf(row, sizeof row, "%" PRIu64 ",%.17g,%.17g,%.17g,%.17g,%d\n", seed,
                  r.eval_accuracy, r.eval_loss, r.global.kappa, max_kappa, degenerate);
    summary_csv += row;
    checks.report("seed " + tag + ": accuracy=" + short_real(r.eval_accuracy) +
                  " kappa_w=" + short_real(r.global.kappa) +
                  " max_kappa_wn=" + short_real(max_kappa));
  }
  write_text(dir / "summary.csv", summary_csv);

  const MeanCi acc = mean_ci(accs);
  const MeanCi kw = mean_ci(final_kappas);
  const MeanCi kwn = mean_ci(max_kappas);
  std::string summary_line = "accuracy " + short_real(acc.mean) + " +/- " +
                             short_real(acc.half_width) + " over " + std::to_string(acc.n) +
                             " seeds; final kappa(W) mean " + short_real(kw.mean) +
                             "; max kappa(W_N) mean " + short_real(kwn.mean);
  write_text(dir / "summary.txt", summary_line + "\n");
  checks.report(summary_line);
  checks.check(true, "train: " + std::to_string(cfg.seeds) + " runs completed, outputs under " +
                         cfg.out_dir,
               "");
}

void cmd_prop1(const RunConfig& cfg, CheckList& checks) {
  Prop1Study study =
      run_prop1_study(kProp1Gammas, kProp1Dims, cfg.seeds, kProp1Steps, cfg.alpha, cfg.beta);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "prop1.csv", prop1_to_csv(study));

  int flagged = 0, total = 0;
  std::string first_violation;
  for (const Prop1Cell& cell : study.cells) {
    flagged += cell.flagged_steps;
    total += static_cast<int>(cell.trace.size());
    if (!cell.monotone && first_violation.empty()) {
      first_violation = "gamma=" + short_real(cell.gamma) + " d=" + std::to_string(cell.d) +
                        " seed=" + std::to_string(cell.seed);
    }
  }
  checks.report(std::to_string(study.cells.size()) + " cells, " + std::to_string(total) +
                " consecutive-predictor pairs, " + std::to_string(flagged) +
                " rank-deficient (ordered as +inf)");
  checks.check(study.all_monotone,
               "prop1: effective condition number never decreases along colinear sequences",
               first_violation);
}

void cmd_prop3(const RunConfig& cfg, CheckList& checks) {
  Prop3Study study = run_prop3_study(kProp3Epsilons);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "prop3.csv", prop3_to_csv(study));

  for (const Prop3Row& row : study.rows) {
    checks.report("eps=" + short_real(row.epsilon) + ": kappa(W*)=" +
                  short_real(row.kappa_wstar_numeric) + " (expected " +
                  short_real(row.kappa_wstar_expected) + "), kappa(What)=" +
                  short_real(row.kappa_what_numeric) + " (closed form " +
                  short_real(row.kappa_what_closed) + "), residuals " +
                  short_real(row.residual_verbatim) + " as written / " +
                  short_real(row.residual_corrected) + " corrected");
  }
  checks.check(study.kappa_star_ok, "prop3: kappa of the sharp optimum equals 1/eps to 1e-9",
               "numeric/closed-form disagreement");
  checks.check(study.kappa_hat_ok,
               "prop3: kappa of the balanced optimum matches its closed form to 1e-9",
               "numeric/closed-form disagreement");
  checks.check(study.monotone_to_one,
               "prop3: balanced-optimum kappa decreases toward 1 as eps shrinks",
               "sequence not monotone");
}

void cmd_theorem1(const RunConfig& cfg, CheckList& checks) {
  Theorem1Study study = run_theorem1_study(cfg);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "theorem1.csv", theorem1_to_csv(study));

  const int n = static_cast<int>(study.seeds.size());
  checks.report("normalized scoring kappa(W) <= unnormalized in " +
                std::to_string(study.normalized_wins) + "/" + std::to_string(n) + " paired seeds");
  checks.check(study.all_frob_exact,
               "theorem1: every normalized trace row has frobenius norm sqrt(n_way) exactly",
               "a normalized row deviated from sqrt(n_way)");
}

void cmd_gradcheck(const RunConfig& cfg, CheckList& checks) {
  const std::vector<GradCheck> suite = run_gradcheck_suite();
  std::string csv = "name,max_rel_err,tolerance,pass\n";
  for (const GradCheck& c : suite) {
    csv += "\"" + c.name + "\"," + real_str(c.max_rel_err) + "," + real_str(c.tolerance) + "," +
           (c.pass ? "1" : "0") + "\n";
    checks.check(c.pass, "gradcheck: " + c.name + " (max rel err " + short_real(c.max_rel_err) +
                             ")",
                 "max rel err " + short_real(c.max_rel_err) + " exceeds " +
                     short_real(c.tolerance));
  }
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "gradcheck.csv", csv);
}

void cmd_mtr(const RunConfig& cfg, CheckList& checks) {
  MtrStudy study = run_mtr_study(cfg.seeds, kMtrMonteCarlo);
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  write_text(dir / "mtr_noiseless.csv", sweep_to_csv(study.noiseless));
  write_text(dir / "mtr_n1.csv", sweep_to_csv(study.n1_sweep));
  write_text(dir / "mtr_kappa.csv", sweep_to_csv(study.kappa_sweep));

  checks.check(study.noiseless_ok, "mtr: noiseless planted recovery has excess risk <= 1e-6",
               "max excess risk " + short_real(study.noiseless_max_er));
  checks.report("excess-risk medians across per-task sample counts {5,20,80}: " +
                short_real(study.n1_medians[0]) + ", " + short_real(study.n1_medians[1]) + ", " +
                short_real(study.n1_medians[2]) +
                (study.n1_decreasing ? " (decreasing)" : " (NOT decreasing)"));
  checks.report("excess-risk medians across planted kappa {1,10,100}: " +
                short_real(study.kappa_medians[0]) + ", " + short_real(study.kappa_medians[1]) +
                ", " + short_real(study.kappa_medians[2]) +
                (study.kappa_non_decreasing ? " (non-decreasing)" : " (NOT non-decreasing)"));
}

void cmd_diag_replay(const RunConfig& cfg, CheckList& checks) {
  const fs::path dir(cfg.out_dir);
  if (!fs::is_directory(dir)) {
    checks.fail("replay: output directory exists", cfg.out_dir + " is not a directory");
    return;
  }
  std::vector<fs::path> files;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("archive_", 0) == 0 && name.size() > 4 &&
        name.compare(name.size() - 4, 4, ".csv") == 0) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    checks.fail("replay: archives found", "no archive_*.csv under " + cfg.out_dir);
    return;
  }
  for (const fs::path& file : files) {
    const std::string name = file.filename().string();
    try {
      EpisodeArchive archive = archive_from_csv(read_text(file));
      GaussianFamily family = archive_family(archive);
      for (std::size_t i = 0; i < archive.size(); ++i) {
        (void)archive_replay(archive, family, i);
      }
      checks.check(true, "replay: " + name + " (" + std::to_string(archive.size()) +
                             " episodes verified)",
                   "");
    } catch (const std::exception& e) {
      checks.fail("replay: " + name, e.what());
    }
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"spectral meta-learning numerics toolkit", "spectral_meta"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  int seeds = 0;
  std::string out_dir;
  std::vector<std::string> overrides;
  CLI::Option* config_opt = app.add_option("--config", config_path, "key = value config file");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed");
  CLI::Option* seeds_opt = app.add_option("--seeds", seeds, "number of run seeds");
  CLI::Option* out_opt = app.add_option("--out", out_dir, "output directory");
  app.add_option("--override", overrides, "key=value config override (repeatable)");

  const char* names[] = {"train",     "prop1", "prop3",      "theorem1",
                         "gradcheck", "mtr",   "diag-replay"};
  const char* blurbs[] = {
      "episodic training runs: per-seed trace, archive, checkpoint, summary",
      "colinear-sequence conditioning grid with monotonicity check",
      "two-task construction vs closed forms",
      "paired normalized/unnormalized prototype runs",
      "finite-difference audit of every gradient path",
      "linear multi-task excess-risk sweeps",
      "re-verify episode archives under --out against their fingerprints"};
  for (std::size_t i = 0; i < std::size(names); ++i) {
    app.add_subcommand(names[i], blurbs[i])->fallthrough();
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  CheckList checks(command, out);
  try {
    const int cap = worker_cap();  // validates SPECTRAL_META_THREADS
    (void)cap;

    RunConfig cfg;
    if (config_opt->count() > 0) cfg = load_config(config_path, cfg);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (seeds_opt->count() > 0) cfg.seeds = seeds;
    if (out_opt->count() > 0) cfg.out_dir = out_dir;
    for (const std::string& assignment : overrides) apply_override(cfg, assignment);
    validate_config(cfg);

    if (command == "train") {
      cmd_train(cfg, checks);
    } else if (command == "prop1") {
      cmd_prop1(cfg, checks);
    } else if (command == "prop3") {
      cmd_prop3(cfg, checks);
    } else if (command == "theorem1") {
      cmd_theorem1(cfg, checks);
    } else if (command == "gradcheck") {
      cmd_gradcheck(cfg, checks);
    } else if (command == "mtr") {
      cmd_mtr(cfg, checks);
    } else {
      cmd_diag_replay(cfg, checks);
    }
  } catch (const std::exception& e) {
    checks.fail(command + ": setup", e.what());
  }
  return checks.finish();
}

}  // namespace smeta
