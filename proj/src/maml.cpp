#include "smeta/maml.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "smeta/regularizers.hpp"
#include "smeta/tape.hpp"

namespace smeta {

namespace {

Matrix ones_matrix(int r, int c) {
  Matrix m(r, c);
  for (double& v : m.a) v = 1.0;
  return m;
}

Matrix onehot(const std::vector<int>& labels, int n_way) {
  Matrix m(static_cast<int>(labels.size()), n_way);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_way)
      throw std::invalid_argument("label out of range for the classification head");
    m(static_cast<int>(i), labels[i]) = 1.0;
  }
  return m;
}

// Mean cross-entropy from a logits node, with the usual constant row-max
// shift inside log-sum-exp.
Tape::Id mean_ce_node(Tape& t, Tape::Id logits, const std::vector<int>& labels, int n_way) {
  const int n = t.value(logits).rows;
  if (n != static_cast<int>(labels.size()))
    throw std::invalid_argument("label count does not match logit rows");
  Tape::Id row_max = t.row_max_const(logits);
  Tape::Id shifted = t.sub(logits, t.matmul(row_max, t.constant(ones_matrix(1, n_way))));
  Tape::Id lse = t.add(t.log_op(t.row_sums(t.exp_op(shifted))), row_max);
  Tape::Id picked = t.row_sums(t.mul(logits, t.constant(onehot(labels, n_way))));
  return t.scale(t.sum_all(t.sub(lse, picked)), 1.0 / n);
}

Tape::Id head_logits(Tape& t, Tape::Id emb, Tape::Id head_w, Tape::Id head_b) {
  return t.add_rowvec(t.matmul(emb, t.transpose(head_w)), head_b);
}

double accuracy_from_logits(const Matrix& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return logits.rows == 0 ? 0.0 : static_cast<double>(correct) / logits.rows;
}

double mean_ce_value(const Matrix& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (int i = 0; i < logits.rows; ++i) {
    double mx = logits(i, 0);
    for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int j = 0; j < logits.cols; ++j) z += std::exp(logits(i, j) - mx);
    total += mx + std::log(z) - logits(i, labels[static_cast<size_t>(i)]);
  }
  return logits.rows == 0 ? 0.0 : total / logits.rows;
}

void validate_model(const ModelParams& p) {
  if (p.head_w.rows <= 0 || p.head_w.cols != p.encoder.output_dim)
    throw std::invalid_argument("head width does not match the encoder output dimension");
  if (p.head_b.rows != 1 || p.head_b.cols != p.head_w.rows)
    throw std::invalid_argument("head bias must be 1 x n_way");
}

void validate_episode_for(const ModelParams& p, const Episode& ep) {
  if (ep.n_way != p.head_w.rows)
    throw std::invalid_argument("episode n_way does not match the head");
  if (ep.support_x.cols != p.encoder.input_dim || ep.query_x.cols != p.encoder.input_dim)
    throw std::invalid_argument("episode feature width does not match the encoder");
}

// Parameter node ids for one model replica on the tape, starting at the
// meta-parameter leaves and rebound to update nodes as adaptation unrolls.
struct AdaptedIds {
  std::vector<Tape::Id> enc_w, enc_b;
  Tape::Id head_w = Tape::kNone;
  Tape::Id head_b = Tape::kNone;

  std::vector<Tape::Id> all() const {
    std::vector<Tape::Id> ids = enc_w;
    ids.insert(ids.end(), enc_b.begin(), enc_b.end());
    ids.push_back(head_w);
    ids.push_back(head_b);
    return ids;
  }
};

AdaptedIds adapt_on_tape(Tape& t, const AdaptedIds& start, Activation act, const Episode& ep,
                         int steps, double alpha) {
  AdaptedIds cur = start;
  if (steps <= 0 || alpha == 0.0) return cur;
  Tape::Id sx = t.constant(ep.support_x);
  for (int s = 0; s < steps; ++s) {
    EncoderNodes en{cur.enc_w, cur.enc_b};
    Tape::Id emb = encoder_apply(t, en, act, sx);
    Tape::Id loss = mean_ce_node(t, head_logits(t, emb, cur.head_w, cur.head_b), ep.support_y,
                                 ep.n_way);
    std::vector<Tape::Id> wrt = cur.all();
    std::vector<Tape::Id> g = t.gradients(loss, wrt);
    auto stepped = [&](Tape::Id param, Tape::Id grad) {
      return grad == Tape::kNone ? param : t.sub(param, t.scale(grad, alpha));
    };
    const size_t nl = cur.enc_w.size();
    for (size_t l = 0; l < nl; ++l) cur.enc_w[l] = stepped(cur.enc_w[l], g[l]);
    for (size_t l = 0; l < nl; ++l) cur.enc_b[l] = stepped(cur.enc_b[l], g[nl + l]);
    cur.head_w = stepped(cur.head_w, g[2 * nl]);
    cur.head_b = stepped(cur.head_b, g[2 * nl + 1]);
  }
  return cur;
}

}  // namespace

MetaOrder meta_order_from_string(const std::string& name) {
  if (name == "first") return MetaOrder::kFirst;
  if (name == "second") return MetaOrder::kSecond;
  throw std::invalid_argument("unknown meta order: " + name);
}

std::string meta_order_name(MetaOrder order) {
  return order == MetaOrder::kFirst ? "first" : "second";
}

ModelParams init_model(const std::vector<int>& encoder_dims, int n_way, Activation activation,
                       Rng& rng) {
  if (n_way < 2) throw std::invalid_argument("init_model: need at least two classes");
  ModelParams p;
  p.encoder = init_encoder(encoder_dims, activation, rng);
  const int k = p.encoder.output_dim;
  const double bound = std::sqrt(6.0 / (k + n_way));
  p.head_w = Matrix(n_way, k);
  for (double& v : p.head_w.a) v = rng.uniform(-bound, bound);
  p.head_b = Matrix(1, n_way);
  return p;
}

ModelParams inner_adapt(const ModelParams& params, const Episode& episode, int steps,
                        double alpha) {
  validate_model(params);
  validate_episode_for(params, episode);
  if (steps < 0) throw std::invalid_argument("inner_adapt: negative step count");
  ModelParams cur = params;
  if (steps == 0 || alpha == 0.0) return cur;
  for (int s = 0; s < steps; ++s) {
    Tape t;
    EncoderNodes en = encoder_leaves(t, cur.encoder);
    AdaptedIds ids{en.weights, en.biases, t.leaf(cur.head_w), t.leaf(cur.head_b)};
    Tape::Id emb = encoder_apply(t, en, cur.encoder.activation, t.constant(episode.support_x));
    Tape::Id loss = mean_ce_node(t, head_logits(t, emb, ids.head_w, ids.head_b),
                                 episode.support_y, episode.n_way);
    std::vector<Tape::Id> wrt = ids.all();
    std::vector<Tape::Id> g = t.gradients(loss, wrt);
    auto applied = [&](Matrix& param, Tape::Id grad) {
      if (grad != Tape::kNone) param = sub(param, smeta::scale(t.value(grad), alpha));
    };
    const size_t nl = cur.encoder.layers.size();
    for (size_t l = 0; l < nl; ++l) applied(cur.encoder.layers[l].weight, g[l]);
    for (size_t l = 0; l < nl; ++l) applied(cur.encoder.layers[l].bias, g[nl + l]);
    applied(cur.head_w, g[2 * nl]);
    applied(cur.head_b, g[2 * nl + 1]);
  }
  return cur;
}

MamlMetrics outer_step(ModelParams& params, const std::vector<Episode>& batch,
                       const MamlConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("outer_step: empty episode batch");
  validate_model(params);
  for (const Episode& ep : batch) validate_episode_for(params, ep);

  Tape t;
  EncoderNodes enc0 = encoder_leaves(t, params.encoder);
  AdaptedIds theta{enc0.weights, enc0.biases, t.leaf(params.head_w), t.leaf(params.head_b)};
  const Activation act = params.encoder.activation;
  const int batch_size = static_cast<int>(batch.size());

  std::vector<AdaptedIds> adapted;
  adapted.reserve(batch.size());
  Tape::Id total = Tape::kNone;
  double acc_sum = 0.0;
  for (const Episode& ep : batch) {
    AdaptedIds a = adapt_on_tape(t, theta, act, ep, cfg.inner_steps, cfg.alpha);
    Tape::Id q_emb = encoder_apply(t, EncoderNodes{a.enc_w, a.enc_b}, act,
                                   t.constant(ep.query_x));
    Tape::Id q_logits = head_logits(t, q_emb, a.head_w, a.head_b);
    Tape::Id q_loss = mean_ce_node(t, q_logits, ep.query_y, ep.n_way);
    acc_sum += accuracy_from_logits(t.value(q_logits), ep.query_y);
    total = total == Tape::kNone ? q_loss : t.add(total, q_loss);
    adapted.push_back(a);
  }
  total = t.scale(total, 1.0 / batch_size);

  Tape::Id wn = adapted[0].head_w;
  for (size_t e = 1; e < adapted.size(); ++e) wn = t.vstack2(wn, adapted[e].head_w);
  const Matrix wn_val = t.value(wn);

  PenaltyConfig pc;
  pc.lambda1 = cfg.lambda1;
  pc.lambda2 = cfg.lambda2;
  pc.sigma_floor = cfg.sigma_floor;
  PenaltyResult pen = spectral_penalty(wn_val, pc);

  CondNumber cn = condition_number(wn_val);
  MamlMetrics metrics;
  metrics.query_loss = t.value(total)(0, 0);
  metrics.total_loss = metrics.query_loss + pen.value;
  metrics.accuracy = acc_sum / batch_size;
  metrics.kappa_wn = cn.value;
  metrics.frob_wn = frobenius_norm(wn_val);
  metrics.degenerate_wn = cn.degenerate || pen.degenerate;
  metrics.wn = wn_val;

  std::vector<std::pair<Tape::Id, Matrix>> seeds{{total, Matrix(1, 1, {1.0})}};
  if (cfg.lambda1 != 0.0 || cfg.lambda2 != 0.0) seeds.emplace_back(wn, pen.gradient);

  const std::vector<Tape::Id> theta_ids = theta.all();
  std::vector<Matrix> grad_values;
  grad_values.reserve(theta_ids.size());
  for (Tape::Id id : theta_ids) {
    const Matrix& v = t.value(id);
    grad_values.emplace_back(v.rows, v.cols);
  }

  if (cfg.order == MetaOrder::kSecond) {
    std::vector<Tape::Id> g = t.gradients(seeds, theta_ids);
    for (size_t i = 0; i < theta_ids.size(); ++i)
      if (g[i] != Tape::kNone) grad_values[i] = t.value(g[i]);
  } else {
    // First order: read the adjoints at the adapted parameters themselves
    // (identity Jacobian back to the meta-parameters). Episodes that did not
    // adapt share the meta leaf, whose adjoint already accumulates them all,
    // so duplicate ids are counted once.
    std::vector<std::set<Tape::Id>> per_slot(theta_ids.size());
    for (const AdaptedIds& a : adapted) {
      std::vector<Tape::Id> ids = a.all();
      for (size_t i = 0; i < ids.size(); ++i) per_slot[i].insert(ids[i]);
    }
    std::vector<Tape::Id> wrt;
    std::unordered_map<Tape::Id, size_t> where;
    for (const auto& slot : per_slot)
      for (Tape::Id id : slot)
        if (where.emplace(id, wrt.size()).second) wrt.push_back(id);
    std::vector<Tape::Id> g = t.gradients(seeds, wrt);
    for (size_t i = 0; i < per_slot.size(); ++i)
      for (Tape::Id id : per_slot[i]) {
        Tape::Id gid = g[where.at(id)];
        if (gid != Tape::kNone) grad_values[i] = add(grad_values[i], t.value(gid));
      }
  }

  const size_t nl = params.encoder.layers.size();
  auto descend = [&](Matrix& param, const Matrix& grad) {
    param = sub(param, smeta::scale(grad, cfg.beta));
  };
  for (size_t l = 0; l < nl; ++l) descend(params.encoder.layers[l].weight, grad_values[l]);
  for (size_t l = 0; l < nl; ++l) descend(params.encoder.layers[l].bias, grad_values[nl + l]);
  descend(params.head_w, grad_values[2 * nl]);
  descend(params.head_b, grad_values[2 * nl + 1]);
  return metrics;
}

double maml_objective(const ModelParams& params, const std::vector<Episode>& batch,
                      const MamlConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("maml_objective: empty episode batch");
  double total = 0.0;
  Matrix wn;
  for (size_t e = 0; e < batch.size(); ++e) {
    ModelParams ad = inner_adapt(params, batch[e], cfg.inner_steps, cfg.alpha);
    Matrix emb = encoder_eval(ad.encoder, batch[e].query_x);
    Matrix logits = matmul(emb, transpose(ad.head_w));
    for (int i = 0; i < logits.rows; ++i)
      for (int j = 0; j < logits.cols; ++j) logits(i, j) += ad.head_b(0, j);
    total += mean_ce_value(logits, batch[e].query_y);
    wn = e == 0 ? ad.head_w : vstack(wn, ad.head_w);
  }
  total /= static_cast<double>(batch.size());
  PenaltyConfig pc;
  pc.lambda1 = cfg.lambda1;
  pc.lambda2 = cfg.lambda2;
  pc.sigma_floor = cfg.sigma_floor;
  return total + spectral_penalty(wn, pc).value;
}

MamlEval evaluate_maml(const ModelParams& params, const Episode& episode, int inner_steps,
                       double alpha) {
  ModelParams ad = inner_adapt(params, episode, inner_steps, alpha);
  Matrix emb = encoder_eval(ad.encoder, episode.query_x);
  Matrix logits = matmul(emb, transpose(ad.head_w));
  for (int i = 0; i < logits.rows; ++i)
    for (int j = 0; j < logits.cols; ++j) logits(i, j) += ad.head_b(0, j);
  MamlEval ev;
  ev.query_loss = mean_ce_value(logits, episode.query_y);
  ev.accuracy = accuracy_from_logits(logits, episode.query_y);
  return ev;
}

// ---------------------------------------------------------------------------

namespace {

void validate_regression(const Matrix& w, const RegressionEpisode& ep) {
  if (w.rows != 1 || w.cols <= 0)
    throw std::invalid_argument("regression weights must be a single row");
  if (ep.support_x.cols != w.cols || ep.query_x.cols != w.cols)
    throw std::invalid_argument("regression episode width does not match the weights");
  if (ep.support_y.rows != ep.support_x.rows || ep.support_y.cols != 1 ||
      ep.query_y.rows != ep.query_x.rows || ep.query_y.cols != 1)
    throw std::invalid_argument("regression targets must be one column per sample");
}

}  // namespace

double regression_loss(const Matrix& w, const Matrix& x, const Matrix& y) {
  if (w.rows != 1 || x.cols != w.cols || y.rows != x.rows || y.cols != 1)
    throw std::invalid_argument("regression_loss: inconsistent shapes");
  Matrix pred = matmul(x, transpose(w));
  double s = 0.0;
  for (int i = 0; i < pred.rows; ++i) {
    const double d = pred(i, 0) - y(i, 0);
    s += d * d;
  }
  return x.rows == 0 ? 0.0 : 0.5 * s / x.rows;
}

Matrix inner_adapt_regression(const Matrix& w, const RegressionEpisode& episode, int steps,
                              double alpha) {
  validate_regression(w, episode);
  Matrix cur = w;
  if (steps <= 0 || alpha == 0.0) return cur;
  const int n = episode.support_x.rows;
  for (int s = 0; s < steps; ++s) {
    Matrix resid = sub(matmul(episode.support_x, transpose(cur)), episode.support_y);
    Matrix grad = smeta::scale(transpose(matmul(transpose(episode.support_x), resid)), 1.0 / n);
    cur = sub(cur, smeta::scale(grad, alpha));
  }
  return cur;
}

RegressionStepResult outer_step_regression(const Matrix& w, const RegressionEpisode& episode,
                                           double alpha, double beta, int inner_steps,
                                           MetaOrder order) {
  validate_regression(w, episode);
  Tape t;
  Tape::Id w0 = t.leaf(w);
  Tape::Id cur = w0;
  if (inner_steps > 0 && alpha != 0.0) {
    Tape::Id sx = t.constant(episode.support_x);
    Tape::Id sy = t.constant(episode.support_y);
    const double half_inv_n = 0.5 / episode.support_x.rows;
    for (int s = 0; s < inner_steps; ++s) {
      Tape::Id resid = t.sub(t.matmul(sx, t.transpose(cur)), sy);
      Tape::Id loss = t.scale(t.sum_all(t.mul(resid, resid)), half_inv_n);
      Tape::Id g = t.gradients(loss, {cur})[0];
      if (g == Tape::kNone) break;
      cur = t.sub(cur, t.scale(g, alpha));
    }
  }
  Tape::Id q_resid =
      t.sub(t.matmul(t.constant(episode.query_x), t.transpose(cur)), t.constant(episode.query_y));
  Tape::Id q_loss =
      t.scale(t.sum_all(t.mul(q_resid, q_resid)), 0.5 / episode.query_x.rows);

  const Tape::Id target = order == MetaOrder::kSecond ? w0 : cur;
  std::vector<Tape::Id> g = t.gradients(q_loss, {target});
  Matrix grad(w.rows, w.cols);
  if (g[0] != Tape::kNone) grad = t.value(g[0]);

  RegressionStepResult r{sub(w, smeta::scale(grad, beta)), grad, t.value(q_loss)(0, 0)};
  return r;
}

// ---------------------------------------------------------------------------

std::vector<VecD> linear_recurrence(const std::vector<VecD>& thetas, double alpha, double beta,
                                    const VecD& w0) {
  const double c = beta * (1.0 - alpha) * (1.0 - alpha);
  std::vector<VecD> out;
  out.reserve(thetas.size());
  VecD w = w0;
  for (const VecD& th : thetas) {
    if (th.size() != w.size())
      throw std::invalid_argument("linear_recurrence: dimension change mid-sequence");
    if (c != 0.0)
      for (size_t j = 0; j < w.size(); ++j) w[j] -= c * (w[j] - th[j]);
    out.push_back(w);
  }
  return out;
}

Prop1Trace simulate_prop1(const std::vector<VecD>& thetas, double alpha, double beta) {
  if (thetas.size() < 2)
    throw std::invalid_argument("simulate_prop1: need at least two tasks");
  const size_t d = thetas.front().size();
  if (d < 2) throw std::invalid_argument("simulate_prop1: need dimension >= 2");
  for (const VecD& th : thetas)
    if (th.size() != d)
      throw std::invalid_argument("simulate_prop1: dimension change mid-sequence");

  std::vector<VecD> traj = linear_recurrence(thetas, alpha, beta, VecD(d, 0.0));
  Prop1Trace trace;
  trace.reserve(thetas.size() - 1);
  for (size_t i = 1; i < traj.size(); ++i) {
    Prop1Step step;
    step.step = static_cast<int>(i);
    step.theta_pair = Matrix(2, static_cast<int>(d));
    step.w_pair = Matrix(2, static_cast<int>(d));
    for (size_t j = 0; j < d; ++j) {
      step.theta_pair(0, static_cast<int>(j)) = thetas[i - 1][j];
      step.theta_pair(1, static_cast<int>(j)) = thetas[i][j];
      step.w_pair(0, static_cast<int>(j)) = traj[i - 1][j];
      step.w_pair(1, static_cast<int>(j)) = traj[i][j];
    }
    SvdResult s = svd(step.w_pair);
    step.kappa = condition_number(s).value;
    step.rank_deficient = s.sigma[1] <= 1e-6 * s.sigma[0];
    trace.push_back(step);
  }
  return trace;
}

std::vector<VecD> colinear_thetas(int count, int d, double gamma, Rng& rng) {
  if (count < 1 || d < 1) throw std::invalid_argument("colinear_thetas: bad sizes");
  VecD base(static_cast<size_t>(d));
  for (double& v : base) v = rng.gaussian();
  std::vector<VecD> out;
  out.reserve(static_cast<size_t>(count));
  VecD cur = base;
  for (int i = 0; i < count; ++i) {
    out.push_back(cur);
    for (double& v : cur) v *= gamma;
  }
  return out;
}

}  // namespace smeta
