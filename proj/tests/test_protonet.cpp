#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "smeta/encoder.hpp"
#include "smeta/oracle.hpp"
#include "smeta/protonet.hpp"
#include "smeta/rng.hpp"
#include "smeta/tasks.hpp"

using smeta::Activation;
using smeta::EncoderParams;
using smeta::Episode;
using smeta::Matrix;
using smeta::VecD;

namespace {

EncoderParams identity_encoder(int d) {
  EncoderParams p;
  p.activation = Activation::kIdentity;
  p.input_dim = d;
  p.output_dim = d;
  return p;
}

Episode toy_episode(int n_way, int k_shot, int n_query, int d, uint64_t seed) {
  auto fam = smeta::make_gaussian_family(d, 3.0, 1.0, n_way + 4, seed);
  smeta::Rng rng(smeta::split_seed(seed, 1));
  return smeta::sample_episode(fam, n_way, k_shot, n_query, rng);
}

// Reference loss via the direct squared-distance route, used to cross-check
// the expanded-logit production path.
double direct_distance_loss(const Episode& ep, const EncoderParams& enc, bool normalize) {
  Matrix proto = smeta::compute_prototypes(ep, enc).prototypes;
  if (normalize) {
    smeta::PrototypeSet ps{proto, false};
    proto = smeta::normalize_rows(ps).prototypes;
  }
  Matrix q = smeta::encoder_eval(enc, ep.query_x);
  double total = 0.0;
  for (int i = 0; i < q.rows; ++i) {
    VecD logits(static_cast<size_t>(ep.n_way));
    for (int c = 0; c < ep.n_way; ++c) {
      double d2 = 0.0;
      for (int j = 0; j < q.cols; ++j) {
        const double diff = q(i, j) - proto(c, j);
        d2 += diff * diff;
      }
      logits[static_cast<size_t>(c)] = -d2;
    }
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    total += mx + std::log(z) - logits[static_cast<size_t>(ep.query_y[static_cast<size_t>(i)])];
  }
  return total / q.rows;
}

}  // namespace

TEST_CASE("one-shot prototypes equal the support embeddings") {
  Episode ep = toy_episode(3, 1, 2, 4, 0xb0b);
  auto p = smeta::compute_prototypes(ep, identity_encoder(4));
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 4; ++j) CHECK(p.prototypes(c, j) == ep.support_x(c, j));
}

TEST_CASE("two-shot prototypes are the support midpoints") {
  Episode ep = toy_episode(2, 2, 1, 3, 0xb0c);
  auto p = smeta::compute_prototypes(ep, identity_encoder(3));
  for (int c = 0; c < 2; ++c)
    for (int j = 0; j < 3; ++j) {
      const double mid = (ep.support_x(2 * c, j) + ep.support_x(2 * c + 1, j)) / 2.0;
      CHECK(p.prototypes(c, j) == doctest::Approx(mid).epsilon(1e-15));
    }
}

TEST_CASE("five-shot prototypes match a long-double mean oracle") {
  Episode ep = toy_episode(4, 5, 1, 6, 0xb0d);
  auto p = smeta::compute_prototypes(ep, identity_encoder(6));
  for (int c = 0; c < 4; ++c) {
    for (int j = 0; j < 6; ++j) {
      long double acc = 0.0L;
      for (int s = 0; s < 5; ++s) acc += ep.support_x(c * 5 + s, j);
      acc /= 5.0L;
      CHECK(p.prototypes(c, j) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-14));
    }
  }
}

TEST_CASE("row normalization rescales to unit norm and keeps direction") {
  smeta::PrototypeSet p;
  p.prototypes = Matrix(2, 2, {3.0, 4.0, 1.0, 0.0});
  auto n = smeta::normalize_rows(p);
  CHECK(n.normalized);
  CHECK(n.prototypes(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.prototypes(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(n.prototypes(1, 0) == 1.0);

  auto again = smeta::normalize_rows(n);
  for (size_t i = 0; i < n.prototypes.a.size(); ++i) {
    CHECK(again.prototypes.a[i] == doctest::Approx(n.prototypes.a[i]).epsilon(1e-15));
  }
  // Unit rows make the Frobenius norm sqrt(n_way) exactly-as-identity.
  CHECK(smeta::frobenius_norm(n.prototypes) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("zero-norm prototype row is a degeneracy error") {
  smeta::PrototypeSet p;
  p.prototypes = Matrix(2, 2, {1.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS((void)smeta::normalize_rows(p), std::runtime_error);
}

TEST_CASE("equidistant prototypes contribute log n_way per query") {
  // Identity encoder, symmetric support, query at the center.
  Episode ep;
  ep.n_way = 3;
  ep.k_shot = 1;
  ep.n_query = 1;
  ep.support_x = Matrix(3, 2, {1.0, 0.0, -0.5, 0.8, -0.5, -0.8});
  ep.support_y = {0, 1, 2};
  // Place the single query equidistant from all three supports.
  ep.query_x = Matrix(1, 2, {0.0, 0.0});
  ep.query_y = {1};
  // Make distances exactly equal by symmetry of the three unit-ish vectors.
  for (int c = 0; c < 3; ++c) {
    double n2 = 0.0;
    for (int j = 0; j < 2; ++j) n2 += ep.support_x(c, j) * ep.support_x(c, j);
    for (int j = 0; j < 2; ++j) ep.support_x(c, j) /= std::sqrt(n2);
  }
  auto r = smeta::proto_loss(ep, identity_encoder(2), false, 0.0);
  CHECK(r.cross_entropy == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("two-way split with distances zero and one") {
  Episode ep;
  ep.n_way = 2;
  ep.k_shot = 1;
  ep.n_query = 1;
  ep.support_x = Matrix(2, 1, {0.0, 1.0});
  ep.support_y = {0, 1};
  ep.query_x = Matrix(1, 1, {0.0});  // d(q, c0) = 0, d(q, c1) = 1
  ep.query_y = {0};
  auto r = smeta::proto_loss(ep, identity_encoder(1), false, 0.0);
  CHECK(r.cross_entropy == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(r.accuracy == 1.0);
}

TEST_CASE("expanded logits equal the direct-distance route") {
  smeta::Rng rng(0xb0e);
  EncoderParams enc = smeta::init_encoder({5, 6, 4}, Activation::kTanh, rng);
  Episode ep = toy_episode(4, 3, 5, 5, 0xb0f);
  for (bool normalize : {false, true}) {
    auto r = smeta::proto_loss(ep, enc, normalize, 0.0);
    CHECK(r.cross_entropy ==
          doctest::Approx(direct_distance_loss(ep, enc, normalize)).epsilon(1e-12));
  }
}

TEST_CASE("proto loss is invariant to global translation and rotation of embeddings") {
  // Identity encoder so embeddings are the raw features; translate or rotate
  // every feature row and the loss must not move.
  Episode ep = toy_episode(3, 2, 4, 4, 0xb10);
  EncoderParams enc = identity_encoder(4);
  const double base = smeta::proto_loss(ep, enc, false, 0.0).cross_entropy;

  Episode shifted = ep;
  const VecD offset{0.7, -1.3, 2.1, 0.4};
  for (int i = 0; i < shifted.support_x.rows; ++i)
    for (int j = 0; j < 4; ++j) shifted.support_x(i, j) += offset[static_cast<size_t>(j)];
  for (int i = 0; i < shifted.query_x.rows; ++i)
    for (int j = 0; j < 4; ++j) shifted.query_x(i, j) += offset[static_cast<size_t>(j)];
  CHECK(smeta::proto_loss(shifted, enc, false, 0.0).cross_entropy ==
        doctest::Approx(base).epsilon(1e-10));

  smeta::Rng rng(0xb11);
  Matrix g(4, 4);
  for (double& v : g.a) v = rng.gaussian();
  Matrix q = smeta::svd(g).u;  // orthonormal
  Episode rotated = ep;
  rotated.support_x = smeta::matmul(ep.support_x, q);
  rotated.query_x = smeta::matmul(ep.query_x, q);
  CHECK(smeta::proto_loss(rotated, enc, false, 0.0).cross_entropy ==
        doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("query softmax probabilities sum to one and loss is non-negative") {
  smeta::Rng rng(0xb12);
  EncoderParams enc = smeta::init_encoder({4, 5, 3}, Activation::kTanh, rng);
  Episode ep = toy_episode(3, 2, 6, 4, 0xb13);
  auto r = smeta::proto_loss(ep, enc, true, 0.0);
  CHECK(r.loss >= 0.0);

  // Recompute probabilities from the scoring prototypes.
  Matrix q = smeta::encoder_eval(enc, ep.query_x);
  for (int i = 0; i < q.rows; ++i) {
    VecD logits(3);
    for (int c = 0; c < 3; ++c) {
      double d2 = 0.0;
      for (int j = 0; j < q.cols; ++j) {
        const double diff = q(i, j) - r.scoring.prototypes(c, j);
        d2 += diff * diff;
      }
      logits[static_cast<size_t>(c)] = -d2;
    }
    double mx = std::max({logits[0], logits[1], logits[2]});
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx) / z;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("encoder gradients match finite differences, both modes") {
  smeta::Rng rng(0xb14);
  EncoderParams enc = smeta::init_encoder({3, 4, 2}, Activation::kTanh, rng);
  Episode ep = toy_episode(2, 2, 3, 3, 0xb15);
  for (bool normalize : {false, true}) {
    CAPTURE(normalize);
    auto r = smeta::proto_loss(ep, enc, normalize, 0.0);
    for (size_t layer = 0; layer < enc.layers.size(); ++layer) {
      Matrix fd_w = smeta::oracle::fd_gradient(
          [&](const Matrix& w) {
            EncoderParams q = enc;
            q.layers[layer].weight = w;
            return smeta::proto_loss(ep, q, normalize, 0.0).cross_entropy;
          },
          enc.layers[layer].weight, {1e-5});
      for (size_t i = 0; i < fd_w.a.size(); ++i) {
        CHECK(r.grads.weights[layer].a[i] ==
              doctest::Approx(fd_w.a[i]).epsilon(1e-5).scale(1.0));
      }
      Matrix fd_b = smeta::oracle::fd_gradient(
          [&](const Matrix& b) {
            EncoderParams q = enc;
            q.layers[layer].bias = b;
            return smeta::proto_loss(ep, q, normalize, 0.0).cross_entropy;
          },
          enc.layers[layer].bias, {1e-5});
      for (size_t i = 0; i < fd_b.a.size(); ++i) {
        CHECK(r.grads.biases[layer].a[i] ==
              doctest::Approx(fd_b.a[i]).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("entropy and raw-kappa terms reach the encoder gradients") {
  smeta::Rng rng(0xb16);
  EncoderParams enc = smeta::init_encoder({3, 3}, Activation::kTanh, rng);
  Episode ep = toy_episode(3, 2, 2, 3, 0xb17);
  const double le = 0.3;
  const double lk = 0.2;
  auto r = smeta::proto_loss(ep, enc, true, le, lk);
  CHECK(r.loss == doctest::Approx(r.cross_entropy + le * r.entropy + lk * r.kappa).epsilon(1e-12));

  Matrix fd_w = smeta::oracle::fd_gradient(
      [&](const Matrix& w) {
        EncoderParams q = enc;
        q.layers[0].weight = w;
        return smeta::proto_loss(ep, q, true, le, lk).loss;
      },
      enc.layers[0].weight, {1e-5});
  for (size_t i = 0; i < fd_w.a.size(); ++i) {
    CHECK(r.grads.weights[0].a[i] == doctest::Approx(fd_w.a[i]).epsilon(2e-4).scale(1.0));
  }
}

TEST_CASE("normalized scoring prototypes have unit rows") {
  smeta::Rng rng(0xb18);
  EncoderParams enc = smeta::init_encoder({4, 3}, Activation::kTanh, rng);
  Episode ep = toy_episode(3, 2, 2, 4, 0xb19);
  auto r = smeta::proto_loss(ep, enc, true, 0.0);
  for (int c = 0; c < 3; ++c) {
    double n2 = 0.0;
    for (int j = 0; j < 3; ++j) n2 += r.scoring.prototypes(c, j) * r.scoring.prototypes(c, j);
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-12));
  }
}
