#pragma once

#include "smeta/encoder.hpp"
#include "smeta/linalg.hpp"
#include "smeta/tasks.hpp"

namespace smeta {

// Class centroids in embedding space; row i is the prototype of class i.
struct PrototypeSet {
  Matrix prototypes;  // n_way x k
  bool normalized = false;
};

PrototypeSet compute_prototypes(const Episode& ep, const EncoderParams& enc);

// Row-wise w / ||w||. A row with norm below 1e-12 is a degenerate prototype
// (all-collapsed embeddings) and raises an error.
PrototypeSet normalize_rows(const PrototypeSet& p);

// Episode loss: mean over queries of the negative log-probability of the
// true class under softmax(-squared distance to each prototype), temperature
// one. Computed through the expanded logits 2 c^T phi(q) - ||c||^2, which
// differ from -||phi(q) - c||^2 by a per-query constant and give identical
// probabilities. Optional terms on the scoring prototype matrix P:
//   + lambda_entropy * H_sigma(P)
//   + lambda_kappa * kappa(P)   (the raw condition-number variant)
// Normalization (when enabled) applies to prototypes only; queries are left
// unnormalized. Gradients flow through prototypes (and the normalization)
// into every encoder parameter.
struct ProtoLossResult {
  double loss = 0.0;           // cross_entropy + weighted penalty terms
  double cross_entropy = 0.0;  // main term alone
  double entropy = 0.0;        // H_sigma(P), unweighted
  double kappa = 0.0;          // kappa(P), unweighted (1 when unused)
  double accuracy = 0.0;       // fraction of queries classified correctly
  PrototypeSet scoring;        // the prototypes the queries were scored on
  EncoderGrads grads;
};

ProtoLossResult proto_loss(const Episode& ep, const EncoderParams& enc, bool normalize,
                           double lambda_entropy, double lambda_kappa = 0.0);

}  // namespace smeta
