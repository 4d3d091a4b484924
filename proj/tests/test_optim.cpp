// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "taskmix/optim.hpp"

using namespace taskmix;

namespace {

struct Flat {
  std::vector<double> v;
  std::span<double> values() { return v; }
  std::span<const double> values() const { return v; }
};

} // namespace

TEST_CASE("sgd_step") {
  CHECK(sgd_step(Flat{{1.0}}, Flat{{2.0}}, 0.1).v[0] == doctest::Approx(0.8));
  CHECK(sgd_step(Flat{{1.0, -3.0}}, Flat{{2.0, 5.0}}, 0.0).v == std::vector<double>{1.0, -3.0});
  const Flat p{{0.25, 0.5}}, g1{{1.0, 2.0}}, g2{{-0.5, 0.25}};
  const Flat joint = sgd_step(p, Flat{{0.5, 2.25}}, 0.5);
  const Flat chained = sgd_step(sgd_step(p, g1, 0.5), g2, 0.5);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(joint.v[i] == doctest::Approx(chained.v[i]));
  CHECK_THROWS_AS(sgd_step(Flat{{1.0}}, Flat{{1.0, 2.0}}, 0.1), ShapeError);
}

TEST_CASE("adam_step by hand") {
  AdamState<double> state(1);
  Flat p{{1.0}};
  p = adam_step(state, p, Flat{{0.0}}, 0.1);
  CHECK(p.v[0] == 1.0);

  AdamState<double> s2(1);
  Flat q{{0.0}};
  q = adam_step(s2, q, Flat{{1.0}}, 0.1);
  CHECK(s2.t == 1);
  CHECK(q.v[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  q = adam_step(s2, q, Flat{{1.0}}, 0.1);
  CHECK(s2.t == 2);
  CHECK(q.v[0] == doctest::Approx(-0.2).epsilon(1e-7));

  AdamState<double> s3(1);
  Flat r{{0.0}};
  r = adam_step(s3, r, Flat{{-250.0}}, 0.01);
  CHECK(r.v[0] == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("adam with a huge epsilon is scaled SGD") {
  AdamState<double> state(3, AdamHyper{0.9, 0.999, 1e6});
  const Flat g{{0.3, -1.2, 2.0}};
  Flat p{{0.0, 0.0, 0.0}};
  const double lr = 1e6;
  p = adam_step(state, p, g, lr);
  // m̂ = g, √v̂ = |g| ≪ ε, so Δ ≈ −lr·g/ε
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(p.v[i] - (-g.v[i])) < 1e-5 * std::abs(g.v[i]) + 1e-6);
}

TEST_CASE("cosine_lr") {
  const Schedule s{1e-3, 1e-5, 5000};
  CHECK(cosine_lr(0, s) == doctest::Approx(1e-3));
  CHECK(cosine_lr(5000, s) == doctest::Approx(1e-5));
  CHECK(cosine_lr(2500, s) == doctest::Approx((1e-3 + 1e-5) / 2));
  CHECK(cosine_lr(9000, s) == doctest::Approx(1e-5));
  double prev = cosine_lr(0, s);
  for (std::size_t t = 1; t <= 5000; ++t) {
    const double lr = cosine_lr(t, s);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS((Schedule{1e-5, 1e-3, 10}.validate()), ConfigError);
}

TEST_CASE("early stopping") {
  EarlyStopper<int> stopper(2, Direction::minimize);
  CHECK_FALSE(stopper.update(1.0, 0, 10));
  CHECK_FALSE(stopper.update(1.1, 1, 11));
  CHECK(stopper.update(1.2, 2, 12));
  CHECK(stopper.best() == 10);
  CHECK(stopper.best_step() == 0);
  CHECK(stopper.best_value() == 1.0);

  EarlyStopper<int> improving(1, Direction::minimize);
  for (int i = 0; i < 50; ++i)
    CHECK_FALSE(improving.update(1.0 / (i + 1), i, i));

  // maximize mirrors minimize on negated values
  const std::vector<double> seq{0.3, 0.5, 0.5, 0.4, 0.6, 0.1, 0.2};
  EarlyStopper<int> maxer(3, Direction::maximize), miner(3, Direction::minimize);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CHECK(maxer.update(seq[i], i, int(i)) == miner.update(-seq[i], i, int(i)));
    CHECK(maxer.best() == miner.best());
  }
  CHECK(maxer.best_value() == 0.6);

  // equal values are not improvements
  EarlyStopper<int> flat(2, Direction::minimize);
  flat.update(1.0, 0, 0);
  CHECK_FALSE(flat.update(1.0, 1, 1));
  CHECK(flat.update(1.0, 2, 2));
  CHECK(flat.best() == 0);
}
