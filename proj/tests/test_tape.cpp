#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "smeta/linalg.hpp"
#include "smeta/oracle.hpp"
#include "smeta/rng.hpp"
#include "smeta/tape.hpp"

using smeta::Matrix;
using smeta::Tape;

namespace {

Matrix random_matrix(smeta::Rng& rng, int rows, int cols, double lo = -1.5, double hi = 1.5) {
  Matrix m(rows, cols);
  for (double& x : m.a) x = rng.uniform(lo, hi);
  return m;
}

// A smooth scalar function of two matrices exercising most primitives:
// f(A, B) = sum(tanh(AB) / (1 + exp(-AB))) + sum(sqrt(1 + B^T o B^T))
double composite_value(Tape& t, Tape::Id a, Tape::Id b, Tape::Id& out) {
  auto ones_like = [&t](Tape::Id id) {
    const Matrix& v = t.value(id);
    Matrix m(v.rows, v.cols);
    for (double& x : m.a) x = 1.0;
    return t.constant(std::move(m));
  };

  Tape::Id ab = t.matmul(a, b);
  Tape::Id denom = t.add(ones_like(ab), t.exp_op(t.neg(ab)));
  Tape::Id part1 = t.sum_all(t.div(t.tanh_op(ab), denom));

  Tape::Id bt = t.transpose(b);
  Tape::Id part2 = t.sum_all(t.sqrt_op(t.add(ones_like(bt), t.mul(bt, bt))));
  out = t.add(part1, part2);
  return t.value(out)(0, 0);
}

double eval_composite(const Matrix& av, const Matrix& bv) {
  Tape t;
  Tape::Id a = t.leaf(av);
  Tape::Id b = t.leaf(bv);
  Tape::Id out = Tape::kNone;
  return composite_value(t, a, b, out);
}

}  // namespace

TEST_CASE("tape forward values match plain arithmetic") {
  Tape t;
  Tape::Id a = t.leaf(Matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
  Tape::Id b = t.leaf(Matrix(2, 2, {0.5, -1.0, 2.0, 0.25}));

  CHECK(t.value(t.add(a, b))(1, 0) == 5.0);
  CHECK(t.value(t.sub(a, b))(0, 1) == 3.0);
  CHECK(t.value(t.mul(a, b))(1, 1) == 1.0);
  CHECK(t.value(t.matmul(a, b))(0, 0) == doctest::Approx(4.5));
  CHECK(t.value(t.transpose(a))(0, 1) == 3.0);
  CHECK(t.value(t.scale(a, -2.0))(0, 0) == -2.0);
  CHECK(t.value(t.row_sums(a))(1, 0) == 7.0);
  CHECK(t.value(t.col_sums(a))(0, 0) == 4.0);
  CHECK(t.value(t.sum_all(b))(0, 0) == doctest::Approx(1.75));
  CHECK(t.value(t.relu_op(t.neg(a)))(0, 0) == 0.0);
  CHECK(t.value(t.tanh_op(a))(0, 0) == doctest::Approx(std::tanh(1.0)));
}

TEST_CASE("tape shape validation") {
  Tape t;
  Tape::Id a = t.leaf(Matrix(2, 3));
  Tape::Id b = t.leaf(Matrix(2, 2));
  CHECK_THROWS_AS((void)t.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)t.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)t.slice_rows(a, 1, 3), std::invalid_argument);
}

TEST_CASE("vstack and slice_rows round-trip with gradients") {
  Tape t;
  Matrix top_v(1, 2, {1.0, 2.0});
  Matrix bot_v(2, 2, {3.0, 4.0, 5.0, 6.0});
  Tape::Id top = t.leaf(top_v);
  Tape::Id bot = t.leaf(bot_v);
  Tape::Id stacked = t.vstack2(top, bot);
  CHECK(t.value(stacked).rows == 3);
  Tape::Id mid = t.slice_rows(stacked, 1, 1);
  CHECK(t.value(mid)(0, 0) == 3.0);

  // d sum(mid) / d bot = [[1,1],[0,0]]; d / d top is structurally zero.
  Tape::Id loss = t.sum_all(mid);
  auto grads = t.gradients(loss, {top, bot});
  REQUIRE(grads[0] != Tape::kNone);
  CHECK(smeta::max_abs(t.value(grads[0])) == 0.0);
  const Matrix& gb = t.value(grads[1]);
  CHECK(gb(0, 0) == 1.0);
  CHECK(gb(0, 1) == 1.0);
  CHECK(gb(1, 0) == 0.0);
}

TEST_CASE("tape gradients match finite differences on a composite function") {
  smeta::Rng rng(smeta::split_seed(0x7a9e, 1));
  Matrix av = random_matrix(rng, 3, 2);
  Matrix bv = random_matrix(rng, 2, 3);

  Tape t;
  Tape::Id a = t.leaf(av);
  Tape::Id b = t.leaf(bv);
  Tape::Id out = Tape::kNone;
  composite_value(t, a, b, out);
  auto grads = t.gradients(out, {a, b});

  Matrix fd_a = smeta::oracle::fd_gradient(
      [&](const Matrix& x) { return eval_composite(x, bv); }, av, {1e-6});
  Matrix fd_b = smeta::oracle::fd_gradient(
      [&](const Matrix& x) { return eval_composite(av, x); }, bv, {1e-6});

  const Matrix& ga = t.value(grads[0]);
  const Matrix& gb = t.value(grads[1]);
  for (size_t i = 0; i < ga.a.size(); ++i)
    CHECK(ga.a[i] == doctest::Approx(fd_a.a[i]).epsilon(1e-6).scale(1.0));
  for (size_t i = 0; i < gb.a.size(); ++i)
    CHECK(gb.a[i] == doctest::Approx(fd_b.a[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("gradients of log, div and add_rowvec/add_colvec") {
  smeta::Rng rng(smeta::split_seed(0x7a9e, 2));
  Matrix xv = random_matrix(rng, 2, 3, 0.5, 2.0);
  Matrix rv = random_matrix(rng, 1, 3, 0.1, 1.0);
  Matrix cv = random_matrix(rng, 2, 1, 0.1, 1.0);

  auto f = [](const Matrix& x, const Matrix& r, const Matrix& c) {
    Tape t;
    Tape::Id xi = t.leaf(x);
    Tape::Id ri = t.leaf(r);
    Tape::Id ci = t.leaf(c);
    Tape::Id y = t.log_op(t.add_colvec(t.add_rowvec(xi, ri), ci));
    return t.value(t.sum_all(y))(0, 0);
  };

  Tape t;
  Tape::Id xi = t.leaf(xv);
  Tape::Id ri = t.leaf(rv);
  Tape::Id ci = t.leaf(cv);
  Tape::Id y = t.log_op(t.add_colvec(t.add_rowvec(xi, ri), ci));
  auto grads = t.gradients(t.sum_all(y), {xi, ri, ci});

  Matrix fd_x = smeta::oracle::fd_gradient([&](const Matrix& m) { return f(m, rv, cv); }, xv, {1e-6});
  Matrix fd_r = smeta::oracle::fd_gradient([&](const Matrix& m) { return f(xv, m, cv); }, rv, {1e-6});
  Matrix fd_c = smeta::oracle::fd_gradient([&](const Matrix& m) { return f(xv, rv, m); }, cv, {1e-6});
  for (size_t i = 0; i < xv.a.size(); ++i)
    CHECK(t.value(grads[0]).a[i] == doctest::Approx(fd_x.a[i]).epsilon(1e-6).scale(1.0));
  for (size_t i = 0; i < rv.a.size(); ++i)
    CHECK(t.value(grads[1]).a[i] == doctest::Approx(fd_r.a[i]).epsilon(1e-6).scale(1.0));
  for (size_t i = 0; i < cv.a.size(); ++i)
    CHECK(t.value(grads[2]).a[i] == doctest::Approx(fd_c.a[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("relu subgradient is zero at zero and masks negatives") {
  Tape t;
  Tape::Id x = t.leaf(Matrix(1, 3, {-2.0, 0.0, 3.0}));
  Tape::Id loss = t.sum_all(t.relu_op(x));
  auto grads = t.gradients(loss, {x});
  const Matrix& g = t.value(grads[0]);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 0.0);
  CHECK(g(0, 2) == 1.0);
}

TEST_CASE("external adjoint seeds inject analytic gradients") {
  // loss = sum(3 * W); seeding dL/dU for an intermediate U = 2W adds the
  // chain-rule contribution 2 * seed to dL/dW.
  Tape t;
  Matrix wv(2, 2, {1.0, 2.0, 3.0, 4.0});
  Tape::Id w = t.leaf(wv);
  Tape::Id u = t.scale(w, 2.0);
  Tape::Id loss = t.sum_all(t.scale(w, 3.0));
  Matrix seed(2, 2, {1.0, -1.0, 0.5, 0.0});
  auto grads = t.gradients({{loss, Matrix(1, 1, {1.0})}, {u, seed}}, {w});
  const Matrix& g = t.value(grads[0]);
  CHECK(g(0, 0) == doctest::Approx(3.0 + 2.0 * 1.0));
  CHECK(g(0, 1) == doctest::Approx(3.0 - 2.0));
  CHECK(g(1, 0) == doctest::Approx(3.0 + 1.0));
  CHECK(g(1, 1) == doctest::Approx(3.0));
}

TEST_CASE("second derivatives via gradient-of-gradient are exact") {
  // f(x) = sum(x^3) elementwise (as x*x*x): grad = 3x^2, hessian diag = 6x.
  Tape t;
  Matrix xv(2, 2, {0.5, -1.0, 2.0, 0.25});
  Tape::Id x = t.leaf(xv);
  Tape::Id f = t.sum_all(t.mul(t.mul(x, x), x));
  auto g1 = t.gradients(f, {x});
  REQUIRE(g1[0] != Tape::kNone);
  for (size_t i = 0; i < xv.a.size(); ++i)
    CHECK(t.value(g1[0]).a[i] == doctest::Approx(3.0 * xv.a[i] * xv.a[i]).epsilon(1e-14));

  // Differentiate sum(grad) a second time through the adjoint graph.
  auto g2 = t.gradients(t.sum_all(g1[0]), {x});
  REQUIRE(g2[0] != Tape::kNone);
  for (size_t i = 0; i < xv.a.size(); ++i)
    CHECK(t.value(g2[0]).a[i] == doctest::Approx(6.0 * xv.a[i]).epsilon(1e-14));
}

TEST_CASE("second derivatives through matmul and tanh match finite differences") {
  smeta::Rng rng(smeta::split_seed(0x7a9e, 3));
  Matrix av = random_matrix(rng, 2, 2);
  Matrix bv = random_matrix(rng, 2, 2);

  // phi(A) = sum over entries of tanh(A B); study g(A) = d phi/dA, then
  // h(A) = sum(g) and check dh/dA against finite differences of g.
  auto grad_sum = [&](const Matrix& a_in) {
    Tape t;
    Tape::Id a = t.leaf(a_in);
    Tape::Id b = t.constant(bv);
    Tape::Id f = t.sum_all(t.tanh_op(t.matmul(a, b)));
    auto g = t.gradients(f, {a});
    double s = 0.0;
    for (double v : t.value(g[0]).a) s += v;
    return s;
  };

  Tape t;
  Tape::Id a = t.leaf(av);
  Tape::Id b = t.constant(bv);
  Tape::Id f = t.sum_all(t.tanh_op(t.matmul(a, b)));
  auto g1 = t.gradients(f, {a});
  auto g2 = t.gradients(t.sum_all(g1[0]), {a});
  REQUIRE(g2[0] != Tape::kNone);

  Matrix fd = smeta::oracle::fd_gradient(grad_sum, av, {1e-5});
  for (size_t i = 0; i < av.a.size(); ++i)
    CHECK(t.value(g2[0]).a[i] == doctest::Approx(fd.a[i]).epsilon(1e-5).scale(1.0));
}

TEST_CASE("constants do not receive gradients") {
  Tape t;
  Tape::Id c = t.constant(Matrix(2, 2, {1.0, 1.0, 1.0, 1.0}));
  Tape::Id x = t.leaf(Matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
  Tape::Id loss = t.sum_all(t.mul(x, c));
  auto g = t.gradients(loss, {c, x});
  CHECK(g[0] == Tape::kNone);
  CHECK(g[1] != Tape::kNone);
  CHECK(!t.needs_grad(c));
  CHECK(t.needs_grad(x));
}

TEST_CASE("row_max_const gives a constant shift suitable for logsumexp") {
  Tape t;
  Matrix xv(2, 3, {1.0, 5.0, 2.0, -1.0, -7.0, 0.5});
  Tape::Id x = t.leaf(xv);
  Tape::Id m = t.row_max_const(x);
  CHECK(!t.needs_grad(m));
  CHECK(t.value(m)(0, 0) == 5.0);
  CHECK(t.value(m)(1, 0) == 0.5);

  // Stable log-softmax: x - m - log(row_sums(exp(x - m))); its gradient wrt
  // x for the summed first column must match finite differences even though
  // the shift itself is treated as constant.
  auto lse_loss = [](const Matrix& input) {
    Tape tt;
    Tape::Id xi = tt.leaf(input);
    Tape::Id mm = tt.row_max_const(xi);
    Tape::Id shifted = tt.sub(xi, tt.matmul(mm, tt.constant(Matrix(1, 3, {1.0, 1.0, 1.0}))));
    Tape::Id lse = tt.log_op(tt.row_sums(tt.exp_op(shifted)));
    Tape::Id logp = tt.sub(shifted, tt.matmul(lse, tt.constant(Matrix(1, 3, {1.0, 1.0, 1.0}))));
    return tt.value(tt.sum_all(tt.slice_rows(tt.transpose(logp), 0, 1)))(0, 0);
  };

  Tape tt;
  Tape::Id xi = tt.leaf(xv);
  Tape::Id mm = tt.row_max_const(xi);
  Tape::Id shifted = tt.sub(xi, tt.matmul(mm, tt.constant(Matrix(1, 3, {1.0, 1.0, 1.0}))));
  Tape::Id lse = tt.log_op(tt.row_sums(tt.exp_op(shifted)));
  Tape::Id logp = tt.sub(shifted, tt.matmul(lse, tt.constant(Matrix(1, 3, {1.0, 1.0, 1.0}))));
  Tape::Id loss = tt.sum_all(tt.slice_rows(tt.transpose(logp), 0, 1));
  auto g = tt.gradients(loss, {xi});
  Matrix fd = smeta::oracle::fd_gradient(lse_loss, xv, {1e-6});
  for (size_t i = 0; i < xv.a.size(); ++i)
    CHECK(tt.value(g[0]).a[i] == doctest::Approx(fd.a[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("gradient accumulates across fan-out") {
  Tape t;
  Tape::Id x = t.leaf(Matrix(1, 1, {3.0}));
  Tape::Id y = t.add(t.mul(x, x), t.scale(x, 4.0));  // x^2 + 4x -> dy/dx = 2x + 4
  auto g = t.gradients(y, {x});
  CHECK(t.value(g[0])(0, 0) == doctest::Approx(10.0).epsilon(1e-15));
}
