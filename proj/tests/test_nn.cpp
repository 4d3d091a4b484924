// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "taskmix/nn.hpp"

using namespace taskmix;
using taskmix::testing::finite_difference;
using taskmix::testing::random_batch;
using taskmix::testing::rel_err;

namespace {

const Geometry kSmall{4, {3}, 2};

std::vector<double> as_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

} // namespace

TEST_CASE("init_params") {
  RngStream a(7, "init"), b(7, "init");
  const auto p = init_params<double>(kSmall, a);
  CHECK(p == init_params<double>(kSmall, b));
  for (double v : p.bias(0))
    CHECK(v == 0.0);
  for (double v : p.head_bias())
    CHECK(v == 0.0);
  for (double v : p.slope(0))
    CHECK(v == 0.25);
  const double bound = std::sqrt(6.0 / (4 + 3));
  for (double v : p.weights(0))
    CHECK(std::abs(v) <= bound);

  const Geometry wide{768, {768, 768, 768}, 14};
  ModelParams<float> q(wide);
  CHECK(q.num_layers() == 3);
  CHECK(q.weights(2).size() == 768u * 768u);
  CHECK(q.head_weights().size() == 14u * 768u);

  CHECK_THROWS_AS(Geometry({0, {3}, 2}).validate(), ConfigError);
  CHECK_THROWS_AS(Geometry({4, {3, 0}, 2}).validate(), ConfigError);
  CHECK_THROWS_AS(Geometry({4, {3}, 0}).validate(), ConfigError);
}

TEST_CASE("prelu") {
  CHECK(prelu(2.0, 0.25) == 2.0);
  CHECK(prelu(-2.0, 0.25) == -0.5);
  CHECK(prelu(0.0, 0.7) == 0.0);
}

TEST_CASE("forward hand cases") {
  ModelParams<double> p(Geometry{1, {1}, 1});
  p.weights(0)[0] = 1;
  p.slope(0)[0] = 0.25;
  p.head_weights()[0] = 2;
  p.head_bias()[0] = 1;
  Matrix<double> x(1, 1);
  x(0, 0) = 3;
  CHECK(forward(p, x)(0, 0) == 7.0);
  x(0, 0) = -4;
  CHECK(forward(p, x)(0, 0) == doctest::Approx(2.0 * -1.0 + 1.0));

  ModelParams<double> zero(kSmall);
  Matrix<double> xs(5, 4, std::vector<double>(20, 1.5));
  const Matrix<double> logits = forward(zero, xs);
  CHECK(logits.rows == 5);
  CHECK(std::all_of(logits.data.begin(), logits.data.end(), [](double v) { return v == 0.0; }));

  CHECK_THROWS_AS(forward(zero, Matrix<double>(2, 3)), ShapeError);
}

TEST_CASE("forward is batch-order equivariant") {
  RngStream rng(1);
  const auto p = init_params<double>(kSmall, rng);
  const auto b = random_batch<double>(6, 4, 2, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Matrix<double> xp(6, 4);
  for (std::size_t r = 0; r < 6; ++r)
    std::copy_n(b.x.row(perm[r]).begin(), 4, xp.row(r).begin());
  const auto l = forward(p, b.x), lp = forward(p, xp);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(lp(r, c) == l(perm[r], c));
}

TEST_CASE("weighted_ce hand cases") {
  Matrix<double> logits(1, 2);
  Matrix<double> y(1, 2, {1, 0});
  const std::vector<double> w{1, 1};
  CHECK(weighted_ce<double>(logits, y, w) == doctest::Approx(std::log(2.0)));
  Matrix<double> soft(1, 2, {0.5, 0.5});
  CHECK(weighted_ce<double>(logits, soft, w) == doctest::Approx(std::log(2.0)));
  const std::vector<double> w0{0, 1};
  CHECK(weighted_ce<double>(logits, y, w0) == 0.0);

  // large logits stay finite
  Matrix<double> big(1, 2, {1000, -1000});
  CHECK(weighted_ce<double>(big, y, w) == doctest::Approx(0.0));
  CHECK(std::isfinite(weighted_ce<double>(big, Matrix<double>(1, 2, {0, 1}), w)));

  Matrix<double> bad(1, 2, {std::nan(""), 0});
  CHECK_THROWS_AS(weighted_ce<double>(bad, y, w), NumericError);
  CHECK_THROWS_AS(weighted_ce<double>(logits, Matrix<double>(1, 3), std::vector<double>{1, 1, 1}), ShapeError);
}

TEST_CASE("weighted_ce is non-negative") {
  RngStream rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix<double> logits(4, 3), y(4, 3);
    for (double &v : logits.data)
      v = 5 * rng.normal();
    for (std::size_t r = 0; r < 4; ++r) {
      const double l = rng.uniform();
      y(r, rng.index(3)) += l;
      y(r, rng.index(3)) += 1 - l;
    }
    const std::vector<double> w{rng.uniform(), rng.uniform(), 0.0};
    CHECK(weighted_ce<double>(logits, y, w) >= 0.0);
  }
}

TEST_CASE("backward matches central differences for every parameter class") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    CAPTURE(seed);
    RngStream rng(seed, "gradcheck");
    ModelParams<double> p = init_params<double>(kSmall, rng);
    // move slopes off 0.25 and biases off 0 so their gradients are exercised
    for (double &v : p.values())
      v += 0.1 * rng.normal();
    const auto batch = random_batch<double>(8, 4, 2, rng);
    const auto lg = backward(p, batch);
    const auto loss = [&](const ModelParams<double> &q) { return weighted_ce<double>(forward(q, batch.x), batch.y, batch.w); };
    CHECK(lg.loss == doctest::Approx(loss(p)).epsilon(1e-14));

    ModelParams<double> fd(kSmall);
    const auto numeric = finite_difference<ModelParams<double>>(p, loss, 1e-4);
    std::copy(numeric.begin(), numeric.end(), fd.values().begin());
    CHECK(rel_err(lg.grad.weights(0), fd.weights(0)) < 1e-5);
    CHECK(rel_err(lg.grad.bias(0), fd.bias(0)) < 1e-5);
    CHECK(rel_err(lg.grad.slope(0), fd.slope(0)) < 1e-5);
    CHECK(rel_err(lg.grad.head_weights(), fd.head_weights()) < 1e-5);
    CHECK(rel_err(lg.grad.head_bias(), fd.head_bias()) < 1e-5);
  }
}

TEST_CASE("backward through a deeper net and a headless neck") {
  for (const Geometry &g : {Geometry{5, {4, 3}, 3}, Geometry{3, {}, 2}}) {
    RngStream rng(9);
    const auto p = init_params<double>(g, rng);
    const auto batch = random_batch<double>(7, g.input_dim, g.classes, rng);
    const auto lg = backward(p, batch);
    const auto numeric = finite_difference<ModelParams<double>>(p, [&](const ModelParams<double> &q) {
      return weighted_ce<double>(forward(q, batch.x), batch.y, batch.w);
    }, 1e-4);
    CHECK(rel_err(as_vector(lg.grad.values()), numeric) < 1e-5);
  }
}

TEST_CASE("backward edge cases") {
  RngStream rng(4);
  const auto p = init_params<double>(kSmall, rng);
  auto batch = random_batch<double>(1, 4, 2, rng);

  auto zero_w = batch;
  std::fill(zero_w.w.begin(), zero_w.w.end(), 0.0);
  const auto inert = backward(p, zero_w);
  for (double g : inert.grad.values())
    CHECK(g == 0.0);

  Batch<double> twice{Matrix<double>(2, 4), Matrix<double>(2, 2), batch.w};
  for (std::size_t r = 0; r < 2; ++r) {
    std::copy_n(batch.x.data.begin(), 4, twice.x.row(r).begin());
    std::copy_n(batch.y.data.begin(), 2, twice.y.row(r).begin());
  }
  const auto one = backward(p, batch), two = backward(p, twice);
  const auto single = one.grad.values();
  const auto doubled = two.grad.values();
  for (std::size_t i = 0; i < single.size(); ++i)
    CHECK(doubled[i] == doctest::Approx(single[i]).epsilon(1e-14));

  auto wrong = random_batch<double>(2, 4, 3, rng);
  CHECK_THROWS_AS(backward(p, wrong), ShapeError);
}

TEST_CASE("hessian-vector product matches differences of gradients") {
  RngStream rng(6);
  const Geometry g{4, {3}, 2};
  const auto p = init_params<double>(g, rng);
  const auto batch = random_batch<double>(8, 4, 2, rng);
  ModelParams<double> v(g);
  for (double &x : v.values())
    x = rng.normal();
  const auto hv = hessian_vector_product(p, batch, v);

  const double h = 1e-5;
  auto shifted = [&](double s) {
    ModelParams<double> q = p;
    for (std::size_t i = 0; i < q.size(); ++i)
      q.values()[i] += s * v.values()[i];
    return backward(q, batch).grad;
  };
  const auto up = shifted(h), down = shifted(-h);
  std::vector<double> fd(p.size());
  for (std::size_t i = 0; i < fd.size(); ++i)
    fd[i] = (up.values()[i] - down.values()[i]) / (2 * h);
  CHECK(rel_err(as_vector(hv.values()), fd) < 1e-6);
}
