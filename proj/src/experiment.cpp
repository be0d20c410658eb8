#include "smeta/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "smeta/oracle.hpp"
#include "smeta/regularizers.hpp"

namespace smeta {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

GaussianFamily family_for(const RunConfig& cfg, uint64_t family_seed) {
  return make_gaussian_family(cfg.ambient_dim, cfg.class_radius, cfg.noise_std, cfg.class_pool,
                              family_seed);
}

EpisodeArchive archive_for(const RunConfig& cfg, uint64_t family_seed) {
  return make_archive(cfg.ambient_dim, cfg.class_radius, cfg.noise_std, cfg.class_pool,
                      family_seed);
}

Episode draw_episode(const GaussianFamily& family, const RunConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  return sample_episode(family, cfg.n_way, cfg.k_shot, cfg.n_query, rng);
}

}  // namespace

int worker_cap() {
  const char* raw = std::getenv("SPECTRAL_META_THREADS");
  if (raw == nullptr || raw[0] == '\0') return 1;
  char* end = nullptr;
  long v = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || v <= 0) {
    throw std::invalid_argument("SPECTRAL_META_THREADS must be a positive integer");
  }
  return static_cast<int>(v > 1024 ? 1024 : v);
}

RunStreams run_streams(uint64_t run_seed) {
  RunStreams s;
  s.family = split_seed(run_seed, 1);
  s.init = split_seed(run_seed, 2);
  s.train = split_seed(run_seed, 3);
  s.eval = split_seed(run_seed, 4);
  return s;
}

TrainResult train_protonet(const RunConfig& cfg, uint64_t run_seed) {
  validate_config(cfg);
  if (cfg.method != RunMethod::kProtonet) {
    throw std::invalid_argument("train_protonet: config selects another method");
  }
  const RunStreams streams = run_streams(run_seed);
  TrainResult out;
  out.run_seed = run_seed;
  GaussianFamily family = family_for(cfg, streams.family);
  out.archive = archive_for(cfg, streams.family);

  Rng init_rng(streams.init);
  EncoderParams enc = init_encoder({cfg.ambient_dim, cfg.embed_dim}, Activation::kTanh, init_rng);
  AdamState adam = make_adam_state(enc);
  const AdamRule rule;

  for (int i = 0; i < cfg.episodes; ++i) {
    const uint64_t ep_seed = split_seed(streams.train, static_cast<uint64_t>(i));
    Episode ep = draw_episode(family, cfg, ep_seed);
    archive_record(out.archive, ep_seed, ep);
    ProtoLossResult res = proto_loss(ep, enc, cfg.normalize, cfg.lambda_entropy, cfg.lambda1);
    TraceExtras extras;
    extras.accuracy = res.accuracy;
    extras.loss = res.loss;
    extras.unit_rows = res.scoring.normalized;
    // step column counts episodes consumed at measurement time, matching the
    // adapted-head trainer's convention.
    out.trace.track(i + 1, res.scoring.prototypes, extras);
    enc = apply_update(enc, res.grads, rule, adam);
  }

  out.encoder = enc;
  out.global = global_kappa_protonet(enc, cfg.normalize, out.archive, kGlobalKappaSamples);

  double acc = 0.0, loss = 0.0;
  for (int i = 0; i < cfg.eval_episodes; ++i) {
    Episode ep = draw_episode(family, cfg, split_seed(streams.eval, static_cast<uint64_t>(i)));
    ProtoLossResult res = proto_loss(ep, enc, cfg.normalize, 0.0, 0.0);
    acc += res.accuracy;
    loss += res.cross_entropy;
  }
  if (cfg.eval_episodes > 0) {
    out.eval_accuracy = acc / cfg.eval_episodes;
    out.eval_loss = loss / cfg.eval_episodes;
  }
  return out;
}

TrainResult train_maml(const RunConfig& cfg, uint64_t run_seed) {
  validate_config(cfg);
  if (cfg.method != RunMethod::kMaml) {
    throw std::invalid_argument("train_maml: config selects another method");
  }
  if (cfg.episodes < cfg.batch) {
    throw std::invalid_argument("train_maml: episodes must cover at least one batch");
  }
  const RunStreams streams = run_streams(run_seed);
  TrainResult out;
  out.run_seed = run_seed;
  GaussianFamily family = family_for(cfg, streams.family);
  out.archive = archive_for(cfg, streams.family);

  Rng init_rng(streams.init);
  ModelParams model =
      init_model({cfg.ambient_dim, cfg.embed_dim}, cfg.n_way, Activation::kTanh, init_rng);

  MamlConfig mc;
  mc.alpha = cfg.alpha;
  mc.beta = cfg.beta;
  mc.inner_steps = cfg.inner_steps_train;
  mc.order = MetaOrder::kSecond;
  mc.lambda1 = cfg.lambda1;
  mc.lambda2 = cfg.lambda2;

  const int outer_steps = cfg.episodes / cfg.batch;
  int episode_index = 0;
  for (int step = 0; step < outer_steps; ++step) {
    std::vector<Episode> batch;
    batch.reserve(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b, ++episode_index) {
      const uint64_t ep_seed = split_seed(streams.train, static_cast<uint64_t>(episode_index));
      batch.push_back(draw_episode(family, cfg, ep_seed));
      archive_record(out.archive, ep_seed, batch.back());
    }
    MamlMetrics metrics = outer_step(model, batch, mc);
    TraceExtras extras;
    extras.accuracy = metrics.accuracy;
    extras.loss = metrics.total_loss;
    // step column counts episodes consumed, so prototype and adapted-head
    // traces share an x-axis.
    out.trace.track(episode_index, metrics.wn, extras);
  }

  out.model = model;
  out.encoder = model.encoder;
  out.global =
      global_kappa_maml(model, cfg.inner_steps_train, cfg.alpha, out.archive, kGlobalKappaSamples);

  double acc = 0.0, loss = 0.0;
  for (int i = 0; i < cfg.eval_episodes; ++i) {
    Episode ep = draw_episode(family, cfg, split_seed(streams.eval, static_cast<uint64_t>(i)));
    MamlEval ev = evaluate_maml(model, ep, cfg.inner_steps_eval, cfg.alpha);
    acc += ev.accuracy;
    loss += ev.query_loss;
  }
  if (cfg.eval_episodes > 0) {
    out.eval_accuracy = acc / cfg.eval_episodes;
    out.eval_loss = loss / cfg.eval_episodes;
  }
  return out;
}

TrainResult train_run(const RunConfig& cfg, uint64_t run_seed) {
  return cfg.method == RunMethod::kProtonet ? train_protonet(cfg, run_seed)
                                            : train_maml(cfg, run_seed);
}

MeanCi mean_ci(const std::vector<double>& xs) {
  MeanCi out;
  out.n = static_cast<int>(xs.size());
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / out.n;
  if (out.n < 2) return out;
  double ss = 0.0;
  for (double x : xs) ss += (x - out.mean) * (x - out.mean);
  const double se = std::sqrt(ss / (out.n - 1) / out.n);
  out.half_width = 1.96 * se;
  return out;
}

std::string model_to_checkpoint(const ModelParams& m) {
  std::string out = "adapted-head-model\n";
  out += serialize_encoder(m.encoder);
  if (!out.empty() && out.back() != '\n') out.push_back('\n');
  out += "head_w\n";
  out += matrix_to_csv(m.head_w);
  out += "head_b\n";
  out += matrix_to_csv(m.head_b);
  return out;
}

ModelParams model_from_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "adapted-head-model") {
    throw std::runtime_error("checkpoint: missing model marker");
  }
  std::string encoder_text;
  std::string head_w_text, head_b_text;
  int section = 0;  // 0 encoder, 1 head_w, 2 head_b
  while (std::getline(in, line)) {
    if (line == "head_w" && section == 0) {
      section = 1;
    } else if (line == "head_b" && section == 1) {
      section = 2;
    } else if (section == 0) {
      encoder_text += line;
      encoder_text.push_back('\n');
    } else if (section == 1) {
      head_w_text += line;
      head_w_text.push_back('\n');
    } else {
      head_b_text += line;
      head_b_text.push_back('\n');
    }
  }
  if (section != 2 || head_w_text.empty() || head_b_text.empty()) {
    throw std::runtime_error("checkpoint: truncated model sections");
  }
  ModelParams m;
  m.encoder = deserialize_encoder(encoder_text);
  m.head_w = matrix_from_csv(head_w_text);
  m.head_b = matrix_from_csv(head_b_text);
  if (m.head_b.rows != 1 || m.head_b.cols != m.head_w.rows) {
    throw std::runtime_error("checkpoint: head shapes disagree");
  }
  return m;
}

bool effective_kappa_monotone(const Prop1Trace& trace, double slack, int* flagged) {
  int flagged_count = 0;
  bool ok = true;
  for (size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].rank_deficient) ++flagged_count;
    if (i == 0) continue;
    const Prop1Step& prev = trace[i - 1];
    const Prop1Step& cur = trace[i];
    if (cur.rank_deficient) continue;  // +infinity dominates everything before
    if (prev.rank_deficient) {
      ok = false;  // finite value after an effectively infinite one
    } else if (cur.kappa < prev.kappa - slack) {
      ok = false;
    }
  }
  if (flagged != nullptr) *flagged = flagged_count;
  return ok;
}

Prop1Study run_prop1_study(const std::vector<double>& gammas, const std::vector<int>& dims,
                           int seeds, int steps, double alpha, double beta) {
  if (gammas.empty() || dims.empty() || seeds < 1 || steps < 2) {
    throw std::invalid_argument("prop1 study: empty grid");
  }
  Prop1Study study;
  for (size_t gi = 0; gi < gammas.size(); ++gi) {
    for (size_t di = 0; di < dims.size(); ++di) {
      const uint64_t cell = split_seed(0x50f1a5ull, (static_cast<uint64_t>(gi) << 8) | di);
      for (int si = 0; si < seeds; ++si) {
        Prop1Cell out;
        out.gamma = gammas[gi];
        out.d = dims[di];
        out.seed = split_seed(cell, static_cast<uint64_t>(si));
        Rng rng(out.seed);
        std::vector<VecD> thetas = colinear_thetas(steps, out.d, out.gamma, rng);
        out.trace = simulate_prop1(thetas, alpha, beta);
        out.monotone = effective_kappa_monotone(out.trace, 1e-12, &out.flagged_steps);
        study.all_monotone = study.all_monotone && out.monotone;
        study.cells.push_back(std::move(out));
      }
    }
  }
  return study;
}

std::string prop1_to_csv(const Prop1Study& study) {
  std::string out = "gamma,d,seed,step,kappa,rank_deficient\n";
  char buf[192];
  for (const Prop1Cell& cell : study.cells) {
    for (const Prop1Step& s : cell.trace) {
      std::snprintf(buf, sizeof buf, "%.17g,%d,%" PRIu64 ",%d,%.17g,%d\n", cell.gamma, cell.d,
                    cell.seed, s.step, s.kappa, s.rank_deficient ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

double prop3_kappa_hat_closed_form(double epsilon) {
  // Gram of [[0,1],[1,-eps]] is [[1,-eps],[-eps,1+eps^2]] with eigenvalues
  // (2 + eps^2 +- eps*sqrt(4 + eps^2)) / 2; kappa is the root of their ratio.
  const double disc = epsilon * std::sqrt(4.0 + epsilon * epsilon);
  const double hi = 2.0 + epsilon * epsilon + disc;
  const double lo = 2.0 + epsilon * epsilon - disc;
  return std::sqrt(hi / lo);
}

Prop3Study run_prop3_study(const std::vector<double>& epsilons) {
  if (epsilons.empty()) {
    throw std::invalid_argument("prop3 study: no epsilons");
  }
  Prop3Study study;
  for (size_t i = 0; i + 1 < epsilons.size(); ++i) {
    if (!(epsilons[i] > epsilons[i + 1])) {
      throw std::invalid_argument("prop3 study: epsilons must be strictly decreasing");
    }
  }
  for (double eps : epsilons) {
    Prop3Row row;
    row.epsilon = eps;
    Prop3Construction verbatim = build_prop3(eps, 3, 2.0, false);
    Prop3Construction corrected = build_prop3(eps, 3, 2.0, true);
    row.kappa_wstar_numeric = condition_number(verbatim.w_star).value;
    row.kappa_wstar_expected = 1.0 / eps;
    row.kappa_what_numeric = condition_number(verbatim.w_hat).value;
    row.kappa_what_closed = prop3_kappa_hat_closed_form(eps);
    for (double r : verbatim.star_residuals) {
      row.residual_verbatim = std::max(row.residual_verbatim, std::fabs(r));
    }
    for (double r : corrected.star_residuals) {
      row.residual_corrected = std::max(row.residual_corrected, std::fabs(r));
    }
    study.kappa_star_ok = study.kappa_star_ok &&
                          std::fabs(row.kappa_wstar_numeric - row.kappa_wstar_expected) <= 1e-9;
    study.kappa_hat_ok =
        study.kappa_hat_ok && std::fabs(row.kappa_what_numeric - row.kappa_what_closed) <= 1e-9;
    study.rows.push_back(row);
  }
  for (size_t i = 0; i + 1 < study.rows.size(); ++i) {
    if (!(study.rows[i + 1].kappa_what_numeric < study.rows[i].kappa_what_numeric)) {
      study.monotone_to_one = false;
    }
  }
  for (const Prop3Row& row : study.rows) {
    if (row.kappa_what_numeric < 1.0 - 1e-12) study.monotone_to_one = false;
  }
  return study;
}

std::string prop3_to_csv(const Prop3Study& study) {
  std::string out =
      "epsilon,kappa_wstar,kappa_wstar_expected,kappa_what,kappa_what_closed,"
      "residual_verbatim,residual_corrected\n";
  char buf[256];
  for (const Prop3Row& r : study.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epsilon,
                  r.kappa_wstar_numeric, r.kappa_wstar_expected, r.kappa_what_numeric,
                  r.kappa_what_closed, r.residual_verbatim, r.residual_corrected);
    out += buf;
  }
  return out;
}

Theorem1Study run_theorem1_study(const RunConfig& cfg) {
  if (cfg.method != RunMethod::kProtonet) {
    throw std::invalid_argument("theorem1 study: prototype method only");
  }
  RunConfig normalized = cfg;
  normalized.normalize = true;
  RunConfig unnormalized = cfg;
  unnormalized.normalize = false;
  validate_config(normalized);
  validate_config(unnormalized);

  Theorem1Study study;
  const double exact_frob = std::sqrt(static_cast<double>(cfg.n_way));
  for (int i = 0; i < cfg.seeds; ++i) {
    const uint64_t run_seed = cfg.seed + static_cast<uint64_t>(i);
    TrainResult norm_run = train_protonet(normalized, run_seed);
    TrainResult raw_run = train_protonet(unnormalized, run_seed);
    Theorem1Seed rec;
    rec.seed = run_seed;
    rec.kappa_normalized = norm_run.global.kappa;
    rec.kappa_unnormalized = raw_run.global.kappa;
    rec.acc_normalized = norm_run.eval_accuracy;
    rec.acc_unnormalized = raw_run.eval_accuracy;
    rec.frob_exact = true;
    for (const TraceRecord& r : norm_run.trace.records()) {
      if (r.frob_wn != exact_frob) rec.frob_exact = false;
    }
    study.all_frob_exact = study.all_frob_exact && rec.frob_exact;
    if (rec.kappa_normalized <= rec.kappa_unnormalized) ++study.normalized_wins;
    study.seeds.push_back(rec);
  }
  return study;
}

std::string theorem1_to_csv(const Theorem1Study& study) {
  std::string out =
      "seed,kappa_normalized,kappa_unnormalized,frob_exact,acc_normalized,acc_unnormalized\n";
  char buf[224];
  for (const Theorem1Seed& s : study.seeds) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%.17g,%.17g,%d,%.17g,%.17g\n", s.seed,
                  s.kappa_normalized, s.kappa_unnormalized, s.frob_exact ? 1 : 0, s.acc_normalized,
                  s.acc_unnormalized);
    out += buf;
  }
  return out;
}

namespace {

double max_trace_kappa(const Trace& trace) {
  double best = 0.0;
  for (const TraceRecord& r : trace.records()) {
    const double k = r.degenerate ? std::numeric_limits<double>::infinity() : r.kappa_wn;
    best = std::max(best, k);
  }
  return best;
}

// True when the Frobenius norm never exceeds twice its value at the first
// record past `episode_mark` episodes (entire earlier warmup excluded).
bool norm_bounded_after(const Trace& trace, int episode_mark) {
  const std::vector<TraceRecord>& rs = trace.records();
  if (rs.empty()) return true;
  size_t ref = 0;
  while (ref < rs.size() && rs[ref].step < episode_mark) ++ref;
  if (ref == rs.size()) ref = rs.size() - 1;
  const double bound = 2.0 * rs[ref].frob_wn;
  for (size_t i = ref; i < rs.size(); ++i) {
    if (rs[i].frob_wn > bound) return false;
  }
  return true;
}

}  // namespace

MamlComparisonStudy run_maml_comparison_study(const RunConfig& base) {
  if (base.method != RunMethod::kMaml) {
    throw std::invalid_argument("comparison study: adapted-head method only");
  }
  RunConfig reg = base;
  validate_config(reg);
  RunConfig unreg = base;
  unreg.lambda1 = 0.0;
  unreg.lambda2 = 0.0;

  MamlComparisonStudy study;
  std::vector<double> diffs;
  for (int i = 0; i < base.seeds; ++i) {
    const uint64_t run_seed = base.seed + static_cast<uint64_t>(i);
    TrainResult unreg_run = train_maml(unreg, run_seed);
    TrainResult reg_run = train_maml(reg, run_seed);
    MamlComparisonSeed rec;
    rec.seed = run_seed;
    rec.max_kappa_unreg = max_trace_kappa(unreg_run.trace);
    rec.max_kappa_reg = max_trace_kappa(reg_run.trace);
    rec.reg_norm_bounded = norm_bounded_after(reg_run.trace, 50);
    rec.acc_unreg = unreg_run.eval_accuracy;
    rec.acc_reg = reg_run.eval_accuracy;
    if (rec.max_kappa_unreg > rec.max_kappa_reg) ++study.unreg_kappa_wins;
    study.all_reg_norm_bounded = study.all_reg_norm_bounded && rec.reg_norm_bounded;
    diffs.push_back(rec.acc_reg - rec.acc_unreg);
    study.seeds.push_back(rec);
  }
  study.acc_diff = mean_ci(diffs);
  return study;
}

std::string maml_comparison_to_csv(const MamlComparisonStudy& study) {
  std::string out = "seed,max_kappa_unreg,max_kappa_reg,reg_norm_bounded,acc_unreg,acc_reg\n";
  char buf[224];
  for (const MamlComparisonSeed& s : study.seeds) {
    std::snprintf(buf, sizeof buf, "%" PRIu64 ",%.17g,%.17g,%d,%.17g,%.17g\n", s.seed,
                  s.max_kappa_unreg, s.max_kappa_reg, s.reg_norm_bounded ? 1 : 0, s.acc_unreg,
                  s.acc_reg);
    out += buf;
  }
  return out;
}

namespace {

// max |analytic - fd| scaled by max(1, max |fd|): absolute near zero,
// relative for O(1)-and-larger gradients.
double matrix_rel_err(const Matrix& analytic, const Matrix& fd) {
  if (!analytic.same_shape(fd)) {
    throw std::invalid_argument("gradcheck: shape mismatch");
  }
  double scale = 1.0;
  for (double v : fd.a) scale = std::max(scale, std::fabs(v));
  double err = 0.0;
  for (size_t i = 0; i < fd.a.size(); ++i) {
    err = std::max(err, std::fabs(analytic.a[i] - fd.a[i]));
  }
  return err / scale;
}

Episode gradcheck_episode(uint64_t seed) {
  GaussianFamily family = make_gaussian_family(6, 3.0, 1.0, 9, split_seed(seed, 11));
  Rng rng(split_seed(seed, 12));
  return sample_episode(family, 3, 2, 2, rng);
}

double proto_mode_check(bool normalize) {
  Episode ep = gradcheck_episode(0x61ad);
  Rng rng(0x61ae);
  EncoderParams enc = init_encoder({6, 4}, Activation::kTanh, rng);
  ProtoLossResult res = proto_loss(ep, enc, normalize, 0.0, 0.0);
  oracle::FdConfig fd;
  fd.h = 1e-5;
  double worst = 0.0;
  for (int layer = 0; layer < enc.layer_count(); ++layer) {
    auto loss_with_weight = [&](const Matrix& w) {
      EncoderParams p = enc;
      p.layers[layer].weight = w;
      return proto_loss(ep, p, normalize, 0.0, 0.0).loss;
    };
    auto loss_with_bias = [&](const Matrix& b) {
      EncoderParams p = enc;
      p.layers[layer].bias = b;
      return proto_loss(ep, p, normalize, 0.0, 0.0).loss;
    };
    worst = std::max(worst, matrix_rel_err(res.grads.weights[layer],
                                           oracle::fd_gradient(loss_with_weight,
                                                               enc.layers[layer].weight, fd)));
    worst = std::max(worst, matrix_rel_err(res.grads.biases[layer],
                                           oracle::fd_gradient(loss_with_bias,
                                                               enc.layers[layer].bias, fd)));
  }
  return worst;
}

double meta_gradient_check() {
  Rng rng(0x61af);
  RegressionEpisode ep;
  ep.support_x = Matrix(6, 2);
  ep.query_x = Matrix(8, 2);
  for (double& v : ep.support_x.a) v = rng.gaussian();
  for (double& v : ep.query_x.a) v = rng.gaussian();
  const VecD theta{0.8, -1.3};
  auto labels = [&](const Matrix& x) {
    Matrix y(x.rows, 1);
    for (int i = 0; i < x.rows; ++i) y(i, 0) = theta[0] * x(i, 0) + theta[1] * x(i, 1);
    return y;
  };
  ep.support_y = labels(ep.support_x);
  ep.query_y = labels(ep.query_x);
  Matrix w0(1, 2);
  w0(0, 0) = 0.4;
  w0(0, 1) = -0.2;
  RegressionStepResult res = outer_step_regression(w0, ep, 0.2, 1.0, 3, MetaOrder::kSecond);
  auto adapted_query_loss = [&](const Matrix& w) {
    Matrix adapted = inner_adapt_regression(w, ep, 3, 0.2);
    return regression_loss(adapted, ep.query_x, ep.query_y);
  };
  oracle::FdConfig fd;
  fd.h = 1e-5;
  return matrix_rel_err(res.grad, oracle::fd_gradient(adapted_query_loss, w0, fd));
}

Matrix well_separated_matrix(int rows, int cols, uint64_t seed, double max_kappa) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Matrix m(rows, cols);
    for (double& v : m.a) v = rng.gaussian();
    SvdResult s = svd(m);
    const int r = static_cast<int>(s.sigma.size());
    bool separated = s.sigma[r - 1] > 1e-3;
    for (int i = 0; i + 1 < r; ++i) {
      if (s.sigma[i] - s.sigma[i + 1] < 1e-2) separated = false;
    }
    if (separated && s.sigma[0] / s.sigma[r - 1] <= max_kappa) return m;
  }
  throw std::runtime_error("gradcheck: no well-separated draw found");
}

double spectral_penalty_check() {
  Matrix m = well_separated_matrix(4, 3, 0x61b0, 10.0);
  PenaltyConfig cfg;
  cfg.lambda1 = 0.7;
  cfg.lambda2 = 0.3;
  PenaltyResult res = spectral_penalty(m, cfg);
  oracle::FdConfig fd;
  fd.h = 1e-6;
  auto value = [&](const Matrix& w) { return spectral_penalty(w, cfg).value; };
  return matrix_rel_err(res.gradient, oracle::fd_gradient(value, m, fd));
}

double entropy_penalty_check() {
  Matrix m = well_separated_matrix(4, 4, 0x61b1, 50.0);
  PenaltyResult res = entropy_penalty(m, 0.9);
  oracle::FdConfig fd;
  fd.h = 1e-6;
  auto value = [&](const Matrix& w) { return entropy_penalty(w, 0.9).value; };
  return matrix_rel_err(res.gradient, oracle::fd_gradient(value, m, fd));
}

double encoder_backward_check() {
  Rng rng(0x61b2);
  EncoderParams enc = init_encoder({5, 4, 3}, Activation::kTanh, rng);
  VecD x = rng.gaussian_vec(5);
  VecD upstream = rng.gaussian_vec(3);
  EncoderBackward back = encoder_backward(enc, x, upstream);
  oracle::FdConfig fd;
  fd.h = 1e-5;
  double worst = 0.0;
  for (int layer = 0; layer < enc.layer_count(); ++layer) {
    auto with_weight = [&](const Matrix& w) {
      EncoderParams p = enc;
      p.layers[layer].weight = w;
      VecD out = encoder_eval(p, x);
      double dotp = 0.0;
      for (size_t i = 0; i < out.size(); ++i) dotp += upstream[i] * out[i];
      return dotp;
    };
    auto with_bias = [&](const Matrix& b) {
      EncoderParams p = enc;
      p.layers[layer].bias = b;
      VecD out = encoder_eval(p, x);
      double dotp = 0.0;
      for (size_t i = 0; i < out.size(); ++i) dotp += upstream[i] * out[i];
      return dotp;
    };
    worst = std::max(worst,
                     matrix_rel_err(back.params.weights[layer],
                                    oracle::fd_gradient(with_weight, enc.layers[layer].weight,
                                                        fd)));
    worst = std::max(worst, matrix_rel_err(back.params.biases[layer],
                                           oracle::fd_gradient(with_bias, enc.layers[layer].bias,
                                                               fd)));
  }
  // Input gradient through the same contract.
  Matrix x_row(1, 5);
  for (int j = 0; j < 5; ++j) x_row(0, j) = x[static_cast<size_t>(j)];
  auto with_input = [&](const Matrix& xr) {
    VecD xin(5);
    for (int j = 0; j < 5; ++j) xin[static_cast<size_t>(j)] = xr(0, j);
    VecD out = encoder_eval(enc, xin);
    double dotp = 0.0;
    for (size_t i = 0; i < out.size(); ++i) dotp += upstream[i] * out[i];
    return dotp;
  };
  Matrix input_grad(1, 5);
  for (int j = 0; j < 5; ++j) input_grad(0, j) = back.input[static_cast<size_t>(j)];
  worst = std::max(worst, matrix_rel_err(input_grad, oracle::fd_gradient(with_input, x_row, fd)));
  return worst;
}

}  // namespace

std::vector<GradCheck> run_gradcheck_suite() {
  std::vector<GradCheck> checks;
  auto add = [&checks](const std::string& name, double err) {
    GradCheck c;
    c.name = name;
    c.max_rel_err = err;
    c.tolerance = 1e-4;
    c.pass = err <= c.tolerance;
    checks.push_back(c);
  };
  add("prototype loss, raw prototypes", proto_mode_check(false));
  add("prototype loss, normalized prototypes", proto_mode_check(true));
  add("second-order meta-gradient, linear toy", meta_gradient_check());
  add("conditioning + norm penalty", spectral_penalty_check());
  add("spectrum entropy penalty", entropy_penalty_check());
  add("encoder backward contract", encoder_backward_check());
  return checks;
}

MtrStudy run_mtr_study(int seeds, int n_mc) {
  if (seeds < 1) {
    throw std::invalid_argument("mtr study: seeds must be >= 1");
  }
  MtrStudy study;

  MtrRunConfig base;
  base.d = 10;
  base.k = 3;
  base.T = 20;
  base.n2 = 40;
  base.n_mc = n_mc;

  MtrRunConfig noiseless = base;
  noiseless.n1 = 50;
  noiseless.noise_std = 0.0;
  noiseless.kappa_planted = 1.0;
  for (int s = 0; s < seeds; ++s) {
    study.noiseless.push_back(run_mtr_once(noiseless, static_cast<uint64_t>(s + 1)));
    study.noiseless_max_er = std::max(study.noiseless_max_er, study.noiseless.back().er);
  }
  study.noiseless_ok = study.noiseless_max_er <= 1e-6;

  const int n1_grid[] = {5, 20, 80};
  for (int n1 : n1_grid) {
    MtrRunConfig cfg = base;
    cfg.n1 = n1;
    cfg.noise_std = 0.5;
    cfg.kappa_planted = 1.0;
    std::vector<double> ers;
    for (int s = 0; s < seeds; ++s) {
      study.n1_sweep.push_back(run_mtr_once(cfg, static_cast<uint64_t>(s + 1)));
      ers.push_back(study.n1_sweep.back().er);
    }
    study.n1_medians.push_back(median_of(ers));
  }
  study.n1_decreasing =
      study.n1_medians[0] > study.n1_medians[1] && study.n1_medians[1] > study.n1_medians[2];

  const double kappa_grid[] = {1.0, 10.0, 100.0};
  for (double kappa : kappa_grid) {
    MtrRunConfig cfg = base;
    cfg.n1 = 20;
    cfg.noise_std = 0.5;
    cfg.kappa_planted = kappa;
    std::vector<double> ers;
    for (int s = 0; s < seeds; ++s) {
      study.kappa_sweep.push_back(run_mtr_once(cfg, static_cast<uint64_t>(s + 1)));
      ers.push_back(study.kappa_sweep.back().er);
    }
    study.kappa_medians.push_back(median_of(ers));
  }
  study.kappa_non_decreasing = study.kappa_medians[0] <= study.kappa_medians[1] &&
                               study.kappa_medians[1] <= study.kappa_medians[2];
  return study;
}

}  // namespace smeta
