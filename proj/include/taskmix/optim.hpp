// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop SGD, outer-loop Adam, cosine annealing and early stopping.
// Update rules work on anything exposing a flat `values()` span.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "taskmix/error.hpp"

namespace taskmix {

/// p' = p − lr·g
template <class P, class S> P sgd_step(P params, const P &grads, S lr) {
  auto p = params.values();
  auto g = grads.values();
  if (p.size() != g.size())
    throw ShapeError("sgd_step: gradient is not shape-congruent with parameters");
  using T = typename decltype(p)::value_type;
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] -= rate * g[i];
  return params;
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one trained parameter set.
template <class T> struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::size_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  explicit AdamState(std::size_t n, AdamHyper h = {}) : m(n, T{}), v(n, T{}), hyper(h) {}
};

/// Bias-corrected Adam. Moments are updated in place; params are returned.
template <class P, class T>
P adam_step(AdamState<T> &state, P params, const P &grads, double lr) {
  auto p = params.values();
  auto g = grads.values();
  if (p.size() != g.size() || state.m.size() != p.size())
    throw ShapeError("adam_step: state, parameters and gradient differ in size");
  state.t += 1;
  const double b1 = state.hyper.beta1;
  const double b2 = state.hyper.beta2;
  const T c1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(state.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(state.t)));
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  const T ob1 = static_cast<T>(1.0 - b1), ob2 = static_cast<T>(1.0 - b2);
  const T eps = static_cast<T>(state.hyper.eps);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = tb1 * state.m[i] + ob1 * g[i];
    state.v[i] = tb2 * state.v[i] + ob2 * g[i] * g[i];
    const T m_hat = state.m[i] / c1;
    const T v_hat = state.v[i] / c2;
    p[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
  }
  return params;
}

struct Schedule {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t max_step = 5000;

  void validate() const;
};

/// Half-cosine from lr_max at step 0 to lr_min at max_step, flat afterwards.
double cosine_lr(std::size_t step, const Schedule &s);

enum class Direction { minimize, maximize };

/// Tracks the best value seen and signals a stop after `patience`
/// consecutive evaluations without strict improvement.
template <class Snapshot> class EarlyStopper {
public:
  EarlyStopper(std::size_t patience, Direction direction) : patience_(patience), direction_(direction) {}

  /// Returns true when training should stop.
  bool update(double value, std::size_t step, const Snapshot &snapshot) {
    const bool better = !best_ || (direction_ == Direction::minimize ? value < best_value_ : value > best_value_);
    if (better) {
      best_value_ = value;
      best_step_ = step;
      best_ = snapshot;
      stale_ = 0;
      return false;
    }
    ++stale_;
    return stale_ >= patience_;
  }

  bool has_best() const noexcept { return best_.has_value(); }
  double best_value() const noexcept { return best_value_; }
  std::size_t best_step() const noexcept { return best_step_; }
  const Snapshot &best() const { return *best_; }
  std::size_t stale_count() const noexcept { return stale_; }

private:
  std::size_t patience_;
  Direction direction_;
  std::optional<Snapshot> best_;
  double best_value_ = 0.0;
  std::size_t best_step_ = 0;
  std::size_t stale_ = 0;
};

} // namespace taskmix
