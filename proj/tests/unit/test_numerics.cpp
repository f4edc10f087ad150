// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mslb/error.h"
#include "mslb/numerics/ops.h"
#include "mslb/numerics/optim.h"
#include "mslb/numerics/rng.h"
#include "oracles.h"

using namespace mslb;
using num::Index;
using num::Segment;
using TD = num::Tensor<double>;
using MatD = oracle::MatD;

namespace {

MatD random_mat(Index r, Index c, num::Rng& rng, double s = 1.0) {
  MatD m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, s);
  return m;
}

TD leaf(const MatD& m) { return TD::from(m, true); }

// Projects an arbitrary-shaped output to a scalar with fixed random weights so
// every output element contributes a distinct amount to the gradient.
TD probe(const TD& y, std::uint64_t seed = 99) {
  num::Rng rng(seed);
  return num::sum(num::mul(y, TD::from(random_mat(y.rows(), y.cols(), rng))));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("matmul variants agree with the triple loop") {
  num::Rng rng(1);
  const MatD a = random_mat(5, 7, rng), b = random_mat(7, 6, rng), bt = random_mat(6, 7, rng);
  const MatD ref = oracle::matmul(a, b);
  CHECK((num::matmul(TD::from(a), TD::from(b)).value() - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((num::matmul_nt(TD::from(a), TD::from(bt)).value() - oracle::matmul(a, bt.transpose())).cwiseAbs().maxCoeff() <
        1e-12);
  const std::vector<Index> edges = {0, 2, 6};
  CHECK((num::matmul_col_blocks(TD::from(a), TD::from(b), edges).value() - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("matmul_col_blocks leaves earlier blocks bit-identical when columns are appended") {
  num::Rng rng(2);
  const num::Matrix<float> a = random_mat(9, 16, rng).cast<float>();
  const num::Matrix<float> b = random_mat(16, 12, rng).cast<float>();
  num::Matrix<float> wide(16, 20);
  wide << b, random_mat(16, 8, rng).cast<float>();
  using TF = num::Tensor<float>;
  const std::vector<Index> e1 = {0, 12}, e2 = {0, 12, 20};
  const auto y1 = num::matmul_col_blocks(TF::from(a), TF::from(b), e1).value();
  const auto y2 = num::matmul_col_blocks(TF::from(a), TF::from(wide), e2).value();
  CHECK(y1 == y2.leftCols(12));
}

TEST_CASE("shape errors are raised, not silently broadcast") {
  CHECK_THROWS_AS(num::matmul(TD::zeros(2, 3), TD::zeros(2, 3)), ShapeError);
  CHECK_THROWS_AS(num::add(TD::zeros(2, 3), TD::zeros(3, 2)), ShapeError);
}

TEST_CASE("cross entropy matches scalar log-sum-exp and skips ignored rows") {
  num::Rng rng(3);
  const MatD logits = random_mat(6, 9, rng, 3.0);
  const std::vector<int> targets = {0, 8, -100, 4, 4, -100};
  const double got = num::cross_entropy(TD::from(logits), targets, -100).value()(0, 0);
  CHECK(got == doctest::Approx(oracle::cross_entropy(logits, targets, -100)).epsilon(1e-12));
}

TEST_CASE("cross entropy is stable for huge logits") {
  MatD logits(1, 3);
  logits << 1e4, -1e4, 0;
  const double got = num::cross_entropy(TD::from(logits), std::vector<int>{0}, -100).value()(0, 0);
  CHECK(std::isfinite(got));
  CHECK(got == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  num::Rng rng(4);
  const MatD x = random_mat(4, 10, rng, 5.0);
  const MatD p = num::softmax_rows(TD::from(x)).value();
  for (Index r = 0; r < p.rows(); ++r) CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((p.array() >= 0).all());
  const MatD shifted = (x.array() + 123.0).matrix();
  CHECK((num::softmax_rows(TD::from(shifted)).value() - p).cwiseAbs().maxCoeff() < 1e-12);
  const std::vector<double> v = {1000.0, 1000.0};
  const auto s = num::softmax(v);
  CHECK(s[0] == doctest::Approx(0.5));
}

TEST_CASE("gradient checks for every op (double, central differences, h = 1e-5)") {
  num::Rng rng(5);
  SUBCASE("matmul / matmul_nt / col blocks") {
    TD a = leaf(random_mat(3, 4, rng)), b = leaf(random_mat(4, 5, rng)), c = leaf(random_mat(5, 4, rng));
    CHECK(oracle::grad_rel_error([&] { return probe(num::matmul(a, b)); }, {a, b}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::matmul_nt(a, c)); }, {a, c}) < kTol);
    const std::vector<Index> e = {0, 3, 5};
    CHECK(oracle::grad_rel_error([&] { return probe(num::matmul_col_blocks(a, b, e)); }, {a, b}) < kTol);
  }
  SUBCASE("elementwise") {
    TD a = leaf(random_mat(3, 4, rng)), b = leaf(random_mat(3, 4, rng)), row = leaf(random_mat(1, 4, rng));
    CHECK(oracle::grad_rel_error([&] { return probe(num::add(a, b)); }, {a, b}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::sub(a, b)); }, {a, b}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::mul(a, b)); }, {a, b}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::add_row(a, row)); }, {a, row}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::scale(a, 0.7)); }, {a}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return num::mean(num::mul(a, a)); }, {a}) < kTol);
  }
  SUBCASE("activations and normalization") {
    MatD m = random_mat(4, 6, rng);
    for (Index i = 0; i < m.size(); ++i) {
      if (std::abs(m.data()[i]) < 0.05) m.data()[i] = 0.3;  // keep relu away from its kink
    }
    TD x = leaf(m), g = leaf(random_mat(1, 6, rng));
    CHECK(oracle::grad_rel_error([&] { return probe(num::relu(x)); }, {x}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::gelu(x)); }, {x}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::rms_norm(x, g)); }, {x, g}) < kTol);
    CHECK(oracle::grad_rel_error([&] { return probe(num::softmax_rows(x)); }, {x}) < kTol);
  }
  SUBCASE("attention with packed segments and a bidirectional prefix") {
    TD q = leaf(random_mat(7, 4, rng)), k = leaf(random_mat(7, 4, rng)), v = leaf(random_mat(7, 4, rng));
    const std::vector<Segment> segs = {{0, 4, 2}, {4, 3, 0}};
    CHECK(oracle::grad_rel_error([&] { return probe(num::attention(q, k, v, 2, segs)); }, {q, k, v}) < kTol);
  }
  SUBCASE("gathers and pooling") {
    TD table = leaf(random_mat(6, 3, rng)), x = leaf(random_mat(7, 3, rng));
    const std::vector<int> ids = {1, 4, 1, -1, 5};
    CHECK(oracle::grad_rel_error([&] { return probe(num::embedding(table, ids)); }, {table}) < kTol);
    const std::vector<Index> rows = {6, 0, 3, 3};
    CHECK(oracle::grad_rel_error([&] { return probe(num::gather_rows(x, rows)); }, {x}) < kTol);
    const std::vector<Segment> segs = {{0, 4, 0}, {4, 3, 0}};
    const std::vector<Index> counts = {2, 0};
    CHECK(oracle::grad_rel_error([&] { return probe(num::segment_mean(x, segs, counts)); }, {x}) < kTol);
    TD gates = leaf(random_mat(2, 3, rng));
    CHECK(oracle::grad_rel_error([&] { return probe(num::scale_rows_by_gate(x, gates, 1, segs)); }, {x, gates}) <
          kTol);
  }
  SUBCASE("losses") {
    TD logits = leaf(random_mat(5, 6, rng, 2.0));
    const std::vector<int> t = {1, -100, 5, 0, 2};
    CHECK(oracle::grad_rel_error([&] { return num::cross_entropy(logits, t, -100); }, {logits}) < kTol);
    const MatD target = random_mat(5, 6, rng);
    CHECK(oracle::grad_rel_error([&] { return num::mse(logits, target); }, {logits}) < kTol);
  }
}

TEST_CASE("gradients accumulate across reuse of one tensor") {
  TD a = TD::from(MatD::Constant(1, 1, 3.0), true);
  num::backward(num::sum(num::mul(a, a)));
  CHECK(a.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("NoGradGuard records no graph") {
  TD a = TD::from(MatD::Constant(2, 2, 1.0), true);
  num::Tensor<double> y;
  {
    num::NoGradGuard g;
    y = num::scale(a, 2.0);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(num::grad_enabled());
}

TEST_CASE("cosine schedule endpoints and midpoint are exact") {
  num::AdamWConfig c;
  c.lr_max = 3e-4;
  c.lr_min = 1e-5;
  c.total_steps = 1000;
  CHECK(num::cosine_lr(c, 0) == 3e-4);
  CHECK(num::cosine_lr(c, 1000) == 1e-5);
  CHECK(num::cosine_lr(c, 500) == doctest::Approx((3e-4 + 1e-5) / 2).epsilon(1e-15));
  CHECK_THROWS_AS(num::cosine_lr(c, 1001), ContractError);
}

TEST_CASE("AdamW step matches a hand-written update with decoupled decay") {
  num::AdamWConfig c;
  c.lr_max = 0.1;
  c.weight_decay = 0.5;
  c.total_steps = 4;
  c.clip_norm = 0;
  auto w = num::Tensor<float>::from(num::Matrix<float>::Constant(1, 2, 1.0f), true);
  num::AdamW opt(c, {{"w", w}});
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1, 1};
  for (int t = 0; t < 3; ++t) {
    const double g[2] = {2 * ref[0] + 1, -3.0};
    w.mutable_grad() = num::Matrix<float>(1, 2);
    w.mutable_grad() << static_cast<float>(g[0]), static_cast<float>(g[1]);
    opt.step(t);
    const double lr = c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1 + std::cos(M_PI * t / 4.0));
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.98 * v[i] + 0.02 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t + 1)), vh = v[i] / (1 - std::pow(0.98, t + 1));
      ref[i] = ref[i] * (1 - lr * 0.5) - lr * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w.value()(0, 0) == doctest::Approx(ref[0]).epsilon(1e-5));
    CHECK(w.value()(0, 1) == doctest::Approx(ref[1]).epsilon(1e-5));
  }
}

TEST_CASE("gradient clipping rescales to the threshold") {
  auto w = num::Tensor<float>::from(num::Matrix<float>::Zero(1, 2), true);
  w.mutable_grad() = num::Matrix<float>(1, 2);
  w.mutable_grad() << 3.0f, 4.0f;
  std::vector<num::NamedTensor<float>> ps = {{"w", w}};
  CHECK(num::clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(w.grad().norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("non-finite gradients are rejected") {
  num::AdamWConfig c;
  c.total_steps = 2;
  auto w = num::Tensor<float>::from(num::Matrix<float>::Zero(1, 1), true);
  num::AdamW opt(c, {{"w", w}});
  w.mutable_grad() = num::Matrix<float>::Constant(1, 1, std::nanf(""));
  CHECK_THROWS_AS(opt.step(0), NumericError);
}

TEST_CASE("rng is deterministic and forks are independent of draw order") {
  num::Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  num::Rng c(42);
  const auto f1 = c.fork(7).next_u64();
  c.next_u64();
  CHECK(c.fork(7).next_u64() == f1);
  CHECK(num::Rng(42).fork(8).next_u64() != f1);
  num::Rng d(1);
  double s = 0, s2 = 0;
  for (int i = 0; i < 20000; ++i) {
    const double x = d.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / 20000) < 0.03);
  CHECK(std::abs(s2 / 20000 - 1) < 0.05);
}
