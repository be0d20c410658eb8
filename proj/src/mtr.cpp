#include "smeta/mtr.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace smeta {

namespace {

// Gaussian elimination with partial pivoting for the small SPD-ish systems
// this module builds (never larger than d*k by d*k). Throws when a pivot
// collapses entirely; callers add a ridge so that only happens on NaNs.
Matrix solve_linear(Matrix a, Matrix b) {
  const int n = a.rows;
  if (a.cols != n || b.rows != n) throw std::invalid_argument("solve_linear: shape mismatch");
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
    if (a(pivot, col) == 0.0) throw std::runtime_error("solve_linear: singular system");
    if (pivot != col) {
      for (int j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
      for (int j = 0; j < b.cols; ++j) std::swap(b(col, j), b(pivot, j));
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      for (int j = 0; j < b.cols; ++j) b(r, j) -= f * b(col, j);
    }
  }
  Matrix x(n, b.cols);
  for (int col = n - 1; col >= 0; --col) {
    for (int j = 0; j < b.cols; ++j) {
      double s = b(col, j);
      for (int r = col + 1; r < n; ++r) s -= a(col, r) * x(r, j);
      x(col, j) = s / a(col, col);
    }
  }
  return x;
}

// Thin QR by modified Gram-Schmidt. Returns Q in place of m and the
// triangular factor; a collapsed column is replaced by a unit coordinate
// direction orthogonal to the previous ones and reported via the flag.
struct QrResult {
  Matrix q;
  Matrix r;
  bool rank_deficient = false;
};

QrResult mgs_once(const Matrix& m) {
  const int rows = m.rows;
  const int cols = m.cols;
  QrResult out{m, Matrix(cols, cols), false};
  double scale = 0.0;
  for (double v : m.a) scale = std::max(scale, std::fabs(v));
  if (scale == 0.0) scale = 1.0;
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < j; ++i) {
      double dot_ij = 0.0;
      for (int r = 0; r < rows; ++r) dot_ij += out.q(r, i) * out.q(r, j);
      out.r(i, j) = dot_ij;
      for (int r = 0; r < rows; ++r) out.q(r, j) -= dot_ij * out.q(r, i);
    }
    double norm = 0.0;
    for (int r = 0; r < rows; ++r) norm += out.q(r, j) * out.q(r, j);
    norm = std::sqrt(norm);
    if (norm <= 1e-10 * scale) {
      out.rank_deficient = true;
      // Deterministic completion: the first coordinate direction not yet
      // spanned (its triangular row stays zero, so folded coefficients
      // simply drop the dead direction).
      for (int cand = 0; cand < rows; ++cand) {
        VecD e(static_cast<size_t>(rows), 0.0);
        e[static_cast<size_t>(cand)] = 1.0;
        for (int i = 0; i < j; ++i) {
          double d = 0.0;
          for (int r = 0; r < rows; ++r) d += out.q(r, i) * e[static_cast<size_t>(r)];
          for (int r = 0; r < rows; ++r) e[static_cast<size_t>(r)] -= d * out.q(r, i);
        }
        double en = 0.0;
        for (double v : e) en += v * v;
        en = std::sqrt(en);
        if (en > 0.5) {
          for (int r = 0; r < rows; ++r) out.q(r, j) = e[static_cast<size_t>(r)] / en;
          break;
        }
      }
      out.r(j, j) = 0.0;
      continue;
    }
    out.r(j, j) = norm;
    for (int r = 0; r < rows; ++r) out.q(r, j) /= norm;
  }
  return out;
}

// One Gram-Schmidt sweep leaves ~ kappa^2 * eps orthogonality error on badly
// conditioned input; a second sweep of the already near-orthonormal factor
// brings it to working precision ("twice is enough").
QrResult thin_qr(const Matrix& m) {
  QrResult first = mgs_once(m);
  QrResult second = mgs_once(first.q);
  second.r = matmul(second.r, first.r);
  second.rank_deficient = second.rank_deficient || first.rank_deficient;
  return second;
}

Matrix random_orthonormal(int rows, int cols, Rng& rng) {
  if (cols > rows) throw std::invalid_argument("random_orthonormal: more columns than rows");
  for (int attempt = 0; attempt < 16; ++attempt) {
    Matrix g(rows, cols);
    for (double& v : g.a) v = rng.gaussian();
    QrResult qr = thin_qr(g);
    if (!qr.rank_deficient) return qr.q;
  }
  throw std::runtime_error("random_orthonormal: repeated rank-deficient draws");
}

double mean_squared_objective(const std::vector<SourceTask>& tasks, const Matrix& b,
                              const Matrix& w) {
  double total = 0.0;
  int samples = 0;
  for (size_t t = 0; t < tasks.size(); ++t) {
    Matrix coef(b.cols, 1);
    for (int j = 0; j < b.cols; ++j) coef(j, 0) = w(static_cast<int>(t), j);
    Matrix pred = matmul(tasks[t].x, matmul(b, coef));
    for (int i = 0; i < pred.rows; ++i) {
      const double d = pred(i, 0) - tasks[t].y(i, 0);
      total += d * d;
    }
    samples += pred.rows;
  }
  return total / samples;
}

}  // namespace

FitResult fit_source(const std::vector<SourceTask>& tasks, int k) {
  if (tasks.empty()) throw std::invalid_argument("fit_source: no tasks");
  const int d = tasks.front().x.cols;
  if (k < 1 || k > d) throw std::invalid_argument("fit_source: need 1 <= k <= d");
  int total_samples = 0;
  for (const SourceTask& t : tasks) {
    if (t.x.cols != d) throw std::invalid_argument("fit_source: task width mismatch");
    if (t.y.rows != t.x.rows || t.y.cols != 1)
      throw std::invalid_argument("fit_source: targets must be one column per sample");
    if (t.x.rows < 1) throw std::invalid_argument("fit_source: empty task");
    total_samples += t.x.rows;
  }
  if (total_samples < d)
    throw std::invalid_argument("fit_source: fewer samples than input dimensions");

  const int T = static_cast<int>(tasks.size());
  FitResult out;

  // Cached per-task moments; every round works on these, never on raw X.
  std::vector<Matrix> gram(tasks.size());   // X^T X, d x d
  std::vector<Matrix> xty(tasks.size());    // X^T y, d x 1
  for (size_t t = 0; t < tasks.size(); ++t) {
    gram[t] = matmul(transpose(tasks[t].x), tasks[t].x);
    xty[t] = matmul(transpose(tasks[t].x), tasks[t].y);
  }

  // Initial frame: right singular directions of the stacked per-task ridge
  // solutions (deterministic in the data).
  Matrix stacked(T, d);
  for (size_t t = 0; t < tasks.size(); ++t) {
    Matrix a = gram[t];
    for (int i = 0; i < d; ++i) a(i, i) += kMtrRidge;
    Matrix wt = solve_linear(a, xty[t]);
    for (int j = 0; j < d; ++j) stacked(static_cast<int>(t), j) = wt(j, 0);
  }
  Matrix b(d, k);
  if (max_abs(stacked) == 0.0) {
    for (int j = 0; j < k; ++j) b(j, j) = 1.0;
  } else {
    SvdResult s = svd(stacked);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < k; ++j) b(i, j) = s.v(i, j);
  }

  Matrix w(T, k);
  // Coefficients per task at the current frame: (B^T G B + ridge I) w = B^T X^T y.
  auto solve_coefficients = [&]() {
    for (size_t t = 0; t < tasks.size(); ++t) {
      Matrix zz = matmul(transpose(b), matmul(gram[t], b));
      for (int i = 0; i < k; ++i) zz(i, i) += kMtrRidge;
      Matrix zy = matmul(transpose(b), xty[t]);
      Matrix wt = solve_linear(zz, zy);
      for (int j = 0; j < k; ++j) w(static_cast<int>(t), j) = wt(j, 0);
    }
  };

  double prev_objective = 0.0;
  for (int round = 0; round < 500; ++round) {
    double w_norm2_before = 0.0;
    for (double v : w.a) w_norm2_before += v * v;
    solve_coefficients();

    // Frame: normal equations over all entries of B at fixed coefficients.
    Matrix a(d * k, d * k);
    Matrix rhs(d * k, 1);
    for (size_t t = 0; t < tasks.size(); ++t) {
      for (int p = 0; p < k; ++p) {
        const double wp = w(static_cast<int>(t), p);
        for (int q = 0; q < k; ++q) {
          const double ww = wp * w(static_cast<int>(t), q);
          if (ww == 0.0) continue;
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a(i * k + p, j * k + q) += ww * gram[t](i, j);
        }
        for (int i = 0; i < d; ++i) rhs(i * k + p, 0) += wp * xty[t](i, 0);
      }
    }
    for (int i = 0; i < d * k; ++i) a(i, i) += kMtrRidge;
    Matrix vec_b = solve_linear(a, rhs);
    double b_norm2_before = 0.0;
    for (double v : b.a) b_norm2_before += v * v;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < k; ++j) b(i, j) = vec_b(i * k + j, 0);

    // Re-orthonormalize and fold the triangular factor into the coefficients
    // (predictions unchanged: B w = (Q R) w = Q (R w)).
    QrResult qr = thin_qr(b);
    if (qr.rank_deficient) out.rank_flagged = true;
    b = qr.q;
    w = transpose(matmul(qr.r, transpose(w)));

    const double objective = mean_squared_objective(tasks, b, w);
    if (round > 0) {
      // Each half-solve is exact for its ridge-augmented block objective, so
      // the plain objective can rise by at most ridge * ||block||^2 / samples.
      const double slack =
          kMtrRidge * (w_norm2_before + b_norm2_before) / total_samples +
          1e-12 * std::max(1.0, prev_objective);
      if (objective > prev_objective + slack) out.monotone = false;
    }
    out.objective_history.push_back(objective);
    out.rounds = round + 1;
    const bool settled =
        round > 0 && std::fabs(prev_objective - objective) <= 1e-10 * std::max(1.0, prev_objective);
    prev_objective = objective;
    if (settled) {
      out.converged = true;
      break;
    }
  }

  // The loop ends on a frame solve; close with a coefficient solve so the
  // returned pair is a mutual fixed point (and per-task coefficients are the
  // ridge solution for the returned frame).
  {
    double w_norm2_before = 0.0;
    for (double v : w.a) w_norm2_before += v * v;
    solve_coefficients();
    const double objective = mean_squared_objective(tasks, b, w);
    const double slack = kMtrRidge * w_norm2_before / total_samples +
                         1e-12 * std::max(1.0, prev_objective);
    if (!out.objective_history.empty() && objective > prev_objective + slack)
      out.monotone = false;
    out.objective_history.push_back(objective);
    prev_objective = objective;
  }

  out.rep.b = b;
  out.w = w;
  out.objective = prev_objective;
  return out;
}

VecD fit_target(const LinearRepresentation& rep, const Matrix& x, const Matrix& y) {
  if (x.rows < 1) throw std::invalid_argument("fit_target: empty sample");
  if (x.cols != rep.b.rows) throw std::invalid_argument("fit_target: width mismatch");
  if (y.rows != x.rows || y.cols != 1)
    throw std::invalid_argument("fit_target: targets must be one column per sample");
  const int k = rep.b.cols;
  Matrix z = matmul(x, rep.b);
  Matrix zz = matmul(transpose(z), z);
  for (int i = 0; i < k; ++i) zz(i, i) += kMtrRidge;
  Matrix w = solve_linear(zz, matmul(transpose(z), y));
  VecD out(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) out[static_cast<size_t>(j)] = w(j, 0);
  return out;
}

ExcessRiskEstimate excess_risk(const Matrix& b_hat, const VecD& w_hat, const Matrix& b_star,
                               const VecD& w_star, double noise_std, int n_mc, Rng& rng) {
  if (n_mc < 1000) throw std::invalid_argument("excess_risk: need at least 1000 draws");
  if (b_hat.rows != b_star.rows)
    throw std::invalid_argument("excess_risk: ambient dimensions differ");
  if (b_hat.cols != static_cast<int>(w_hat.size()) ||
      b_star.cols != static_cast<int>(w_star.size()))
    throw std::invalid_argument("excess_risk: coefficient lengths do not match frames");

  const int d = b_hat.rows;
  VecD fitted(static_cast<size_t>(d), 0.0);
  VecD truth(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < b_hat.cols; ++j)
      fitted[static_cast<size_t>(i)] += b_hat(i, j) * w_hat[static_cast<size_t>(j)];
    for (int j = 0; j < b_star.cols; ++j)
      truth[static_cast<size_t>(i)] += b_star(i, j) * w_star[static_cast<size_t>(j)];
  }

  double sum = 0.0;
  double sum_sq = 0.0;
  VecD x(static_cast<size_t>(d));
  for (int m = 0; m < n_mc; ++m) {
    for (double& v : x) v = rng.gaussian();
    double pf = 0.0;
    double pt = 0.0;
    for (int i = 0; i < d; ++i) {
      pf += fitted[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
      pt += truth[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
    }
    const double y = pt + noise_std * rng.gaussian();
    const double gap = (pf - y) * (pf - y) - (pt - y) * (pt - y);
    sum += gap;
    sum_sq += gap * gap;
  }
  ExcessRiskEstimate est;
  est.n_montecarlo = n_mc;
  est.value = sum / n_mc;
  const double var = std::max(0.0, sum_sq / n_mc - est.value * est.value);
  est.std_error = std::sqrt(var / n_mc);
  return est;
}

MtrProblem make_planted_problem(int d, int k, int T, const VecD& spectrum, Rng& rng) {
  if (k < 1 || k > d || T < 1) throw std::invalid_argument("make_planted_problem: bad sizes");
  if (static_cast<int>(spectrum.size()) != k)
    throw std::invalid_argument("make_planted_problem: spectrum length must equal k");
  if (k > T)
    throw std::invalid_argument("make_planted_problem: need at least k tasks for the spectrum");
  MtrProblem p;
  p.b_star = random_orthonormal(d, k, rng);
  Matrix u = random_orthonormal(T, k, rng);
  Matrix v = random_orthonormal(k, k, rng);
  Matrix us = u;
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < k; ++j) us(i, j) *= spectrum[static_cast<size_t>(j)];
  p.w_star = matmul(us, transpose(v));
  p.target_w = VecD(static_cast<size_t>(k));
  for (double& w : p.target_w) w = rng.gaussian();
  return p;
}

namespace {

SourceTask sample_task_for(const Matrix& b_star, const VecD& coef, int n, double noise_std,
                           Rng& rng) {
  const int d = b_star.rows;
  SourceTask t;
  t.x = Matrix(n, d);
  for (double& v : t.x.a) v = rng.gaussian();
  VecD direction(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < b_star.cols; ++j)
      direction[static_cast<size_t>(i)] += b_star(i, j) * coef[static_cast<size_t>(j)];
  t.y = Matrix(n, 1);
  for (int i = 0; i < n; ++i) {
    double p = 0.0;
    for (int j = 0; j < d; ++j) p += t.x(i, j) * direction[static_cast<size_t>(j)];
    t.y(i, 0) = p + (noise_std == 0.0 ? 0.0 : noise_std * rng.gaussian());
  }
  return t;
}

}  // namespace

std::vector<SourceTask> sample_source_tasks(const MtrProblem& problem, int n1, double noise_std,
                                            Rng& rng) {
  std::vector<SourceTask> tasks;
  tasks.reserve(static_cast<size_t>(problem.w_star.rows));
  for (int t = 0; t < problem.w_star.rows; ++t) {
    VecD coef(static_cast<size_t>(problem.w_star.cols));
    for (int j = 0; j < problem.w_star.cols; ++j)
      coef[static_cast<size_t>(j)] = problem.w_star(t, j);
    tasks.push_back(sample_task_for(problem.b_star, coef, n1, noise_std, rng));
  }
  return tasks;
}

SourceTask sample_target_task(const MtrProblem& problem, int n2, double noise_std, Rng& rng) {
  return sample_task_for(problem.b_star, problem.target_w, n2, noise_std, rng);
}

VecD spectrum_for_kappa(int k, double kappa) {
  if (k < 1) throw std::invalid_argument("spectrum_for_kappa: k must be positive");
  if (kappa < 1.0) throw std::invalid_argument("spectrum_for_kappa: kappa must be >= 1");
  VecD s(static_cast<size_t>(k), 1.0);
  if (k == 1) return s;
  for (int j = 0; j < k; ++j)
    s[static_cast<size_t>(j)] =
        std::pow(kappa, -static_cast<double>(j) / static_cast<double>(k - 1));
  return s;
}

SweepPoint run_mtr_once(const MtrRunConfig& cfg, uint64_t seed) {
  Rng plant_rng(split_seed(seed, 0));
  Rng source_rng(split_seed(seed, 1));
  Rng target_rng(split_seed(seed, 2));
  Rng mc_rng(split_seed(seed, 3));

  MtrProblem problem =
      make_planted_problem(cfg.d, cfg.k, cfg.T, spectrum_for_kappa(cfg.k, cfg.kappa_planted),
                           plant_rng);
  std::vector<SourceTask> sources = sample_source_tasks(problem, cfg.n1, cfg.noise_std, source_rng);
  SourceTask target = sample_target_task(problem, cfg.n2, cfg.noise_std, target_rng);

  FitResult fit = fit_source(sources, cfg.k);
  VecD w_hat = fit_target(fit.rep, target.x, target.y);
  ExcessRiskEstimate er = excess_risk(fit.rep.b, w_hat, problem.b_star, problem.target_w,
                                      cfg.noise_std, cfg.n_mc, mc_rng);

  SweepPoint point;
  point.n1 = cfg.n1;
  point.T = cfg.T;
  point.k = cfg.k;
  point.kappa_planted = cfg.kappa_planted;
  point.seed = seed;
  point.er = er.value;
  point.er_se = er.std_error;
  return point;
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
  std::string out = "n1,T,k,kappa_planted,seed,er,er_se\n";
  char buf[256];
  for (const SweepPoint& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%" PRIu64 ",%.17g,%.17g\n", p.n1, p.T, p.k,
                  p.kappa_planted, p.seed, p.er, p.er_se);
    out += buf;
  }
  return out;
}

}  // namespace smeta
