#include "smeta/protonet.hpp"

#include <cmath>
#include <stdexcept>

#include "smeta/regularizers.hpp"
#include "smeta/tape.hpp"

namespace smeta {

namespace {

// n_way x n_support averaging map: row c holds 1/k_shot at class-c support
// positions, so P = A * phi(S) is the matrix of class means.
Matrix class_mean_map(const Episode& ep) {
  Matrix a(ep.n_way, ep.support_x.rows);
  for (int s = 0; s < ep.support_x.rows; ++s) {
    a(ep.support_y[static_cast<size_t>(s)], s) = 1.0 / ep.k_shot;
  }
  return a;
}

Matrix ones_matrix(int r, int c) {
  Matrix m(r, c);
  for (double& x : m.a) x = 1.0;
  return m;
}

}  // namespace

PrototypeSet compute_prototypes(const Episode& ep, const EncoderParams& enc) {
  if (ep.support_x.rows == 0) throw std::invalid_argument("compute_prototypes: empty support");
  Matrix emb = encoder_eval(enc, ep.support_x);
  PrototypeSet p;
  p.prototypes = matmul(class_mean_map(ep), emb);
  return p;
}

PrototypeSet normalize_rows(const PrototypeSet& p) {
  PrototypeSet out = p;
  for (int i = 0; i < out.prototypes.rows; ++i) {
    double n2 = 0.0;
    for (int j = 0; j < out.prototypes.cols; ++j) {
      n2 += out.prototypes(i, j) * out.prototypes(i, j);
    }
    const double norm = std::sqrt(n2);
    if (norm < 1e-12) {
      throw std::runtime_error("normalize_rows: degenerate prototype (norm < 1e-12) in row " +
                               std::to_string(i));
    }
    for (int j = 0; j < out.prototypes.cols; ++j) out.prototypes(i, j) /= norm;
  }
  out.normalized = true;
  return out;
}

ProtoLossResult proto_loss(const Episode& ep, const EncoderParams& enc, bool normalize,
                           double lambda_entropy, double lambda_kappa) {
  if (ep.query_x.rows == 0) throw std::invalid_argument("proto_loss: empty query set");
  if (lambda_entropy < 0.0 || lambda_kappa < 0.0) {
    throw std::invalid_argument("proto_loss: negative penalty weight");
  }
  const int n_way = ep.n_way;
  const int nq = ep.query_x.rows;

  Tape t;
  EncoderNodes nodes = encoder_leaves(t, enc);
  Tape::Id support_emb = encoder_apply(t, nodes, enc.activation, t.constant(ep.support_x));
  Tape::Id query_emb = encoder_apply(t, nodes, enc.activation, t.constant(ep.query_x));

  Tape::Id protos = t.matmul(t.constant(class_mean_map(ep)), support_emb);
  if (normalize) {
    Tape::Id norms = t.sqrt_op(t.row_sums(t.mul(protos, protos)));
    const Matrix& nv = t.value(norms);
    for (double v : nv.a) {
      if (v < 1e-12) throw std::runtime_error("proto_loss: degenerate prototype (norm < 1e-12)");
    }
    protos = t.div(protos, t.matmul(norms, t.constant(ones_matrix(1, t.value(protos).cols))));
  }

  // Expanded logits: 2 q . c - ||c||^2 (drops the per-query ||q||^2 shared
  // across classes, which cancels in the softmax).
  Tape::Id gram = t.scale(t.matmul(query_emb, t.transpose(protos)), 2.0);
  Tape::Id proto_sq = t.neg(t.transpose(t.row_sums(t.mul(protos, protos))));
  Tape::Id logits = t.add_rowvec(gram, proto_sq);

  // Stable cross-entropy: mean_q [max_q + log sum exp(l - max_q) - l_true].
  Tape::Id row_max = t.row_max_const(logits);
  Tape::Id shifted = t.sub(logits, t.matmul(row_max, t.constant(ones_matrix(1, n_way))));
  Tape::Id lse = t.add(t.log_op(t.row_sums(t.exp_op(shifted))), row_max);
  Matrix selector(nq, n_way);
  for (int q = 0; q < nq; ++q) selector(q, ep.query_y[static_cast<size_t>(q)]) = 1.0;
  Tape::Id true_logit = t.row_sums(t.mul(logits, t.constant(selector)));
  Tape::Id loss_node = t.scale(t.sum_all(t.sub(lse, true_logit)), 1.0 / nq);

  ProtoLossResult r;
  r.cross_entropy = t.value(loss_node)(0, 0);
  r.loss = r.cross_entropy;
  r.scoring.prototypes = t.value(protos);
  r.scoring.normalized = normalize;

  const Matrix& lg = t.value(logits);
  int correct = 0;
  for (int q = 0; q < nq; ++q) {
    int best = 0;
    for (int c = 1; c < n_way; ++c) {
      if (lg(q, c) > lg(q, best)) best = c;
    }
    if (best == ep.query_y[static_cast<size_t>(q)]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / nq;

  // Spectral terms enter through adjoint seeds at the prototype node: their
  // gradients with respect to P are analytic (singular-vector outer
  // products), and the tape carries them back through the normalization and
  // the encoder.
  std::vector<std::pair<Tape::Id, Matrix>> seeds{{loss_node, Matrix(1, 1, {1.0})}};
  r.kappa = 1.0;
  if (lambda_entropy > 0.0) {
    PenaltyResult ent = entropy_penalty(r.scoring.prototypes, lambda_entropy);
    r.entropy = ent.value / lambda_entropy;
    r.loss += ent.value;
    seeds.emplace_back(protos, ent.gradient);
  } else {
    r.entropy = singular_entropy(r.scoring.prototypes);
  }
  if (lambda_kappa > 0.0) {
    PenaltyConfig cfg;
    cfg.lambda1 = lambda_kappa;
    PenaltyResult spec = spectral_penalty(r.scoring.prototypes, cfg);
    r.kappa = spec.value / lambda_kappa;
    r.loss += spec.value;
    seeds.emplace_back(protos, spec.gradient);
  } else {
    r.kappa = condition_number(r.scoring.prototypes).value;
  }

  EncoderForward f;
  f.nodes = nodes;
  f.output = query_emb;
  std::vector<Tape::Id> wrt;
  for (Tape::Id id : nodes.weights) wrt.push_back(id);
  for (Tape::Id id : nodes.biases) wrt.push_back(id);
  std::vector<Tape::Id> g = t.gradients(seeds, wrt);
  const size_t n = nodes.weights.size();
  for (size_t i = 0; i < n; ++i) {
    const Matrix& w = enc.layers[i].weight;
    r.grads.weights.push_back(g[i] == Tape::kNone ? Matrix(w.rows, w.cols) : t.value(g[i]));
  }
  for (size_t i = 0; i < n; ++i) {
    const Matrix& b = enc.layers[i].bias;
    r.grads.biases.push_back(g[n + i] == Tape::kNone ? Matrix(b.rows, b.cols) : t.value(g[n + i]));
  }
  return r;
}

}  // namespace smeta
