#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "smeta/diagnostics.hpp"
#include "smeta/oracle.hpp"

using smeta::EpisodeArchive;
using smeta::Matrix;
using smeta::TraceExtras;
using smeta::TraceRecord;

namespace {

Matrix seeded_matrix(int rows, int cols, uint64_t seed) {
  smeta::Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.a) v = rng.gaussian();
  return m;
}

EpisodeArchive recorded_archive(int episodes, int n_way, int k_shot, int n_query,
                                uint64_t master_seed) {
  EpisodeArchive archive = smeta::make_archive(8, 4.0, 1.0, 16, 0xfa31);
  smeta::GaussianFamily family = smeta::archive_family(archive);
  for (int i = 0; i < episodes; ++i) {
    const uint64_t seed = smeta::split_seed(master_seed, static_cast<uint64_t>(i));
    smeta::Rng rng(seed);
    smeta::Episode ep = smeta::sample_episode(family, n_way, k_shot, n_query, rng);
    smeta::archive_record(archive, seed, ep);
  }
  return archive;
}

double gram_kappa_oracle(const Matrix& stacked) {
  std::vector<double> sig = smeta::oracle::gram_svd(stacked);
  return sig.front() / sig.back();
}

bool same_episode(const smeta::Episode& a, const smeta::Episode& b) {
  return a.n_way == b.n_way && a.k_shot == b.k_shot && a.n_query == b.n_query &&
         a.support_y == b.support_y && a.query_y == b.query_y &&
         a.support_x.a == b.support_x.a && a.query_x.a == b.query_x.a &&
         a.support_x.same_shape(b.support_x) && a.query_x.same_shape(b.query_x);
}

}  // namespace

TEST_CASE("tracking the identity matrix gives unit condition number and sqrt scale") {
  smeta::Trace trace;
  const TraceRecord& r = trace.track(3, Matrix::identity(4));
  CHECK(r.step == 3);
  CHECK(r.kappa_wn == 1.0);
  CHECK(r.frob_wn == 2.0);
  CHECK(!r.degenerate);
  CHECK(r.accuracy == 0.0);
  CHECK(r.loss == 0.0);
  CHECK(trace.size() == 1);
}

TEST_CASE("unit-row hint records the exact frobenius norm of a normalized batch") {
  Matrix m = seeded_matrix(5, 7, 0xd1a6);
  for (int r = 0; r < m.rows; ++r) {
    double n2 = 0.0;
    for (int c = 0; c < m.cols; ++c) n2 += m(r, c) * m(r, c);
    const double n = std::sqrt(n2);
    for (int c = 0; c < m.cols; ++c) m(r, c) /= n;
  }
  smeta::Trace trace;
  TraceExtras extras;
  extras.unit_rows = true;
  const TraceRecord& hinted = trace.track(0, m, extras);
  CHECK(hinted.frob_wn == std::sqrt(5.0));
  const TraceRecord& plain = trace.track(1, m);
  CHECK(plain.frob_wn == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("tracked values match an independent recomputation") {
  Matrix m = seeded_matrix(6, 4, 0xd1a7);
  smeta::Trace trace;
  TraceExtras extras;
  extras.accuracy = 0.75;
  extras.loss = 1.25;
  const TraceRecord& r = trace.track(10, m, extras);
  CHECK(r.accuracy == 0.75);
  CHECK(r.loss == 1.25);
  CHECK(r.kappa_wn >= 1.0);
  CHECK(r.frob_wn >= 0.0);
  CHECK(r.kappa_wn == doctest::Approx(gram_kappa_oracle(m)).epsilon(1e-10));
  long double sq = 0.0L;
  for (double v : m.a) sq += static_cast<long double>(v) * v;
  CHECK(r.frob_wn == doctest::Approx(static_cast<double>(std::sqrt(sq))).epsilon(1e-12));
}

TEST_CASE("a rank-deficient batch is flagged, not thrown") {
  Matrix ones(3, 3);
  for (double& v : ones.a) v = 1.0;
  smeta::Trace trace;
  const TraceRecord& r = trace.track(0, ones, {});
  CHECK(r.degenerate);
  CHECK(r.kappa_wn >= 1.0);
  CHECK_THROWS_AS((void)trace.track(1, Matrix(), {}), std::invalid_argument);
}

TEST_CASE("trace csv round-trips records exactly") {
  smeta::Trace trace;
  trace.track(0, seeded_matrix(4, 3, 1), {0.5, 2.0, false});
  trace.track(1, seeded_matrix(4, 3, 2), {1.0 / 3.0, 0.1, false});
  trace.track(7, seeded_matrix(4, 3, 3), {0.0, 12345.678901234567, false});
  const std::string csv = smeta::trace_to_csv(trace.records());

  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 4);
  CHECK(csv.rfind("step,kappa_wn,frob_wn,accuracy,loss\n", 0) == 0);

  std::vector<TraceRecord> back = smeta::trace_from_csv(csv);
  REQUIRE(back.size() == trace.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].step == trace.records()[i].step);
    CHECK(back[i].kappa_wn == trace.records()[i].kappa_wn);
    CHECK(back[i].frob_wn == trace.records()[i].frob_wn);
    CHECK(back[i].accuracy == trace.records()[i].accuracy);
    CHECK(back[i].loss == trace.records()[i].loss);
  }
}

TEST_CASE("empty trace exports a header-only file") {
  smeta::Trace trace;
  CHECK(smeta::trace_to_csv(trace.records()) == "step,kappa_wn,frob_wn,accuracy,loss\n");
  CHECK(smeta::trace_from_csv("step,kappa_wn,frob_wn,accuracy,loss\n").empty());
}

TEST_CASE("trace csv rejects malformed input") {
  CHECK_THROWS_AS((void)smeta::trace_from_csv(""), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::trace_from_csv("wrong,header\n"), std::runtime_error);
  const std::string head = "step,kappa_wn,frob_wn,accuracy,loss\n";
  CHECK_THROWS_AS((void)smeta::trace_from_csv(head + "1,2,3\n"), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::trace_from_csv(head + "x,1,1,1,1\n"), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::trace_from_csv(head + "1.5,1,1,1,1\n"), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::trace_from_csv(head + "1,1,1,1,1,9\n"), std::runtime_error);
}

TEST_CASE("trace files round-trip through disk and report io failures") {
  smeta::Trace trace;
  trace.track(0, Matrix::identity(3), {0.25, 0.5, false});
  const std::string path = "diag_trace_tmp.csv";
  smeta::export_csv(trace, path);
  std::vector<TraceRecord> back = smeta::load_trace(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].kappa_wn == trace.records()[0].kappa_wn);
  std::remove(path.c_str());
  CHECK_THROWS_AS(smeta::export_csv(trace, "no_such_dir/trace.csv"), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::load_trace("no_such_file.csv"), std::runtime_error);
}

TEST_CASE("archived episodes replay bitwise from their seeds") {
  EpisodeArchive archive = recorded_archive(5, 3, 2, 4, 0xabcd);
  REQUIRE(archive.size() == 5);
  smeta::GaussianFamily family = smeta::archive_family(archive);
  for (std::size_t i = 0; i < archive.size(); ++i) {
    smeta::Rng rng(archive.entries[i].seed);
    smeta::Episode expect = smeta::sample_episode(family, 3, 2, 4, rng);
    smeta::Episode got = smeta::archive_replay(archive, family, i);
    CHECK(same_episode(expect, got));
    smeta::Episode again = smeta::archive_replay(archive, i);
    CHECK(same_episode(got, again));
  }
}

TEST_CASE("tampered archives fail the replay integrity check") {
  EpisodeArchive archive = recorded_archive(3, 2, 1, 3, 0xabce);

  EpisodeArchive bad_fp = archive;
  bad_fp.entries[1].fingerprint ^= 1;
  CHECK_THROWS_AS((void)smeta::archive_replay(bad_fp, 1), std::runtime_error);

  EpisodeArchive bad_seed = archive;
  bad_seed.entries[0].seed += 1;
  CHECK_THROWS_AS((void)smeta::archive_replay(bad_seed, 0), std::runtime_error);

  EpisodeArchive bad_family = archive;
  bad_family.noise_std = 2.0;
  CHECK_THROWS_AS((void)smeta::archive_replay(bad_family, 0), std::runtime_error);

  CHECK_THROWS_AS((void)smeta::archive_replay(archive, 99), std::invalid_argument);
}

TEST_CASE("one-shot identity-encoder conditioning equals the raw support conditioning") {
  EpisodeArchive archive = recorded_archive(1, 4, 1, 2, 0xabcf);
  smeta::Rng rng(1);
  smeta::EncoderParams enc = smeta::init_encoder({8}, smeta::Activation::kIdentity, rng);
  Matrix stacked = smeta::stack_protonet_predictors(enc, false, archive, 500);
  smeta::Episode ep = smeta::archive_replay(archive, 0);
  REQUIRE(stacked.rows == ep.support_x.rows);
  CHECK(stacked.a == ep.support_x.a);
  smeta::GlobalKappa gk = smeta::global_kappa_protonet(enc, false, archive, 500);
  CHECK(gk.episodes_used == 1);
  CHECK(gk.kappa == doctest::Approx(smeta::condition_number(ep.support_x).value).epsilon(1e-10));
}

TEST_CASE("global conditioning is deterministic under replay") {
  EpisodeArchive archive = recorded_archive(20, 5, 1, 2, 0xabd0);
  smeta::Rng rng(2);
  smeta::EncoderParams enc = smeta::init_encoder({8, 6}, smeta::Activation::kTanh, rng);
  smeta::GlobalKappa a = smeta::global_kappa_protonet(enc, true, archive, 500);
  smeta::GlobalKappa b = smeta::global_kappa_protonet(enc, true, archive, 500);
  CHECK(a.kappa == b.kappa);
  CHECK(a.degenerate == b.degenerate);
  CHECK(a.episodes_used == 20);
}

TEST_CASE("global conditioning over 200 episodes matches the eigensolver route") {
  EpisodeArchive archive = recorded_archive(200, 5, 1, 2, 0xabd1);
  smeta::Rng rng(3);
  smeta::EncoderParams enc = smeta::init_encoder({8, 6}, smeta::Activation::kTanh, rng);
  Matrix stacked = smeta::stack_protonet_predictors(enc, false, archive, 500);
  CHECK(stacked.rows == 200 * 5);
  CHECK(stacked.cols == 6);
  smeta::GlobalKappa gk = smeta::global_kappa_protonet(enc, false, archive, 500);
  CHECK(gk.kappa == doctest::Approx(gram_kappa_oracle(stacked)).epsilon(1e-10));
  CHECK(!gk.degenerate);
}

TEST_CASE("sample cap replays only the most recent episodes") {
  EpisodeArchive archive = recorded_archive(6, 3, 1, 2, 0xabd2);
  smeta::Rng rng(4);
  smeta::EncoderParams enc = smeta::init_encoder({8, 5}, smeta::Activation::kTanh, rng);
  Matrix capped = smeta::stack_protonet_predictors(enc, false, archive, 2);
  CHECK(capped.rows == 2 * 3);

  EpisodeArchive tail = archive;
  tail.entries.erase(tail.entries.begin(), tail.entries.begin() + 4);
  Matrix manual = smeta::stack_protonet_predictors(enc, false, tail, 500);
  CHECK(capped.a == manual.a);
  CHECK(smeta::global_kappa_protonet(enc, false, archive, 2).episodes_used == 2);
}

TEST_CASE("adapted-head conditioning matches a manual replay") {
  EpisodeArchive archive = recorded_archive(10, 3, 2, 3, 0xabd3);
  smeta::Rng rng(5);
  smeta::ModelParams model = smeta::init_model({8, 4}, 3, smeta::Activation::kTanh, rng);

  Matrix stacked = smeta::stack_maml_predictors(model, 3, 0.05, archive, 500);
  CHECK(stacked.rows == 10 * 3);
  CHECK(stacked.cols == 4);
  Matrix manual(stacked.rows, stacked.cols);
  smeta::GaussianFamily family = smeta::archive_family(archive);
  int row = 0;
  for (std::size_t i = 0; i < archive.size(); ++i) {
    smeta::Episode ep = smeta::archive_replay(archive, family, i);
    smeta::ModelParams adapted = smeta::inner_adapt(model, ep, 3, 0.05);
    for (int r = 0; r < adapted.head_w.rows; ++r, ++row) {
      for (int c = 0; c < adapted.head_w.cols; ++c) manual(row, c) = adapted.head_w(r, c);
    }
  }
  CHECK(stacked.a == manual.a);

  smeta::GlobalKappa gk = smeta::global_kappa_maml(model, 3, 0.05, archive, 500);
  CHECK(gk.kappa == doctest::Approx(gram_kappa_oracle(stacked)).epsilon(1e-10));
  CHECK(gk.episodes_used == 10);
}

TEST_CASE("without adaptation the stacked conditioning reduces to the head's") {
  // Repeating the same full-rank head block scales every singular value by
  // sqrt(copies), so the ratio is untouched. The head must span the full
  // embedding dimension for this to hold (4 classes, 4-dim embedding).
  EpisodeArchive archive = recorded_archive(7, 4, 1, 2, 0xabd4);
  smeta::Rng rng(6);
  smeta::ModelParams model = smeta::init_model({8, 4}, 4, smeta::Activation::kTanh, rng);
  smeta::GlobalKappa gk = smeta::global_kappa_maml(model, 0, 0.05, archive, 500);
  CHECK(gk.kappa == doctest::Approx(smeta::condition_number(model.head_w).value).epsilon(1e-10));
  CHECK(!gk.degenerate);
}

TEST_CASE("empty archives and empty stacks are rejected") {
  EpisodeArchive empty = smeta::make_archive(8, 4.0, 1.0, 16, 1);
  smeta::Rng rng(7);
  smeta::EncoderParams enc = smeta::init_encoder({8, 4}, smeta::Activation::kTanh, rng);
  CHECK_THROWS_AS((void)smeta::global_kappa_protonet(enc, false, empty, 500),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)smeta::kappa_via_gram(Matrix()), std::invalid_argument);
  EpisodeArchive archive = recorded_archive(2, 2, 1, 2, 0xabd5);
  CHECK_THROWS_AS((void)smeta::global_kappa_protonet(enc, false, archive, 0),
                  std::invalid_argument);
}

TEST_CASE("gram-route conditioning agrees with the direct route on wide and tall stacks") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    Matrix tall = seeded_matrix(9, 4, seed);
    Matrix wide = seeded_matrix(4, 9, seed + 100);
    CHECK(smeta::kappa_via_gram(tall).kappa ==
          doctest::Approx(smeta::condition_number(tall).value).epsilon(1e-9));
    CHECK(smeta::kappa_via_gram(wide).kappa ==
          doctest::Approx(smeta::condition_number(wide).value).epsilon(1e-9));
  }
}

TEST_CASE("archive csv round-trips and replays clean") {
  EpisodeArchive archive = recorded_archive(6, 4, 2, 3, 0xbeef);
  const std::string text = smeta::archive_to_csv(archive);
  EpisodeArchive back = smeta::archive_from_csv(text);
  CHECK(back.ambient_dim == archive.ambient_dim);
  CHECK(back.class_mean_radius == archive.class_mean_radius);
  CHECK(back.noise_std == archive.noise_std);
  CHECK(back.class_pool_size == archive.class_pool_size);
  CHECK(back.family_seed == archive.family_seed);
  REQUIRE(back.size() == archive.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back.entries[i].seed == archive.entries[i].seed);
    CHECK(back.entries[i].fingerprint == archive.entries[i].fingerprint);
    // the parsed archive must still replay bitwise
    CHECK_NOTHROW((void)smeta::archive_replay(back, i));
  }
  CHECK(smeta::archive_to_csv(back) == text);
}

TEST_CASE("archive csv rejects malformed input") {
  EpisodeArchive archive = recorded_archive(2, 3, 1, 2, 0xbef0);
  const std::string good = smeta::archive_to_csv(archive);
  CHECK_THROWS_AS((void)smeta::archive_from_csv(""), std::runtime_error);
  CHECK_THROWS_AS((void)smeta::archive_from_csv("seed,n_way\n"), std::runtime_error);
  // family descriptor with a missing field
  std::string cut = good;
  cut.replace(cut.find('\n') + 1, cut.find('\n', cut.find('\n') + 1) - cut.find('\n') - 1,
              "8,4,1,16");
  CHECK_THROWS_AS((void)smeta::archive_from_csv(cut), std::runtime_error);
  // negative seed field
  std::string negative = good;
  const size_t entries_at = negative.find("seed,n_way,k_shot,n_query,fingerprint\n");
  REQUIRE(entries_at != std::string::npos);
  negative.insert(entries_at + std::string("seed,n_way,k_shot,n_query,fingerprint\n").size(),
                  "-1,3,1,2,9\n");
  CHECK_THROWS_AS((void)smeta::archive_from_csv(negative), std::runtime_error);
  // garbage entry row
  std::string garbage = good + "x,y,z\n";
  CHECK_THROWS_AS((void)smeta::archive_from_csv(garbage), std::runtime_error);
}
