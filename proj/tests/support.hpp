// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "taskmix/batch.hpp"
#include "taskmix/meta_train.hpp"
#include "taskmix/nn.hpp"
#include "taskmix/rng.hpp"
#include "taskmix/synth.hpp"

namespace taskmix::testing {

/// ‖a − b‖ / ‖b‖, or ‖a − b‖ when b is (numerically) zero.
inline double rel_err(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return ref > 1e-24 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

template <class T> Batch<T> random_batch(std::size_t rows, std::size_t dim, std::size_t classes, RngStream &rng) {
  Batch<T> b{Matrix<T>(rows, dim), Matrix<T>(rows, classes), std::vector<T>(classes)};
  for (T &v : b.x.data)
    v = static_cast<T>(rng.normal());
  for (std::size_t r = 0; r < rows; ++r)
    b.y(r, rng.index(classes)) = T(1);
  for (T &v : b.w)
    v = static_cast<T>(0.5 + rng.uniform());
  return b;
}

/// Central differences of f at p, one coordinate at a time.
template <class P> std::vector<double> finite_difference(P p, const std::function<double(const P &)> &f, double h) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p.values()[i];
    p.values()[i] = keep + h;
    const double up = f(p);
    p.values()[i] = keep - h;
    const double down = f(p);
    p.values()[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

/// A few small tasks, quick to meta-train.
inline Dataset tiny_dataset(std::uint64_t seed = 3, std::size_t train_tasks = 3) {
  SynthSpec spec;
  spec.train_tasks = train_tasks;
  spec.test_tasks = 2;
  spec.examples_per_task = 60;
  spec.min_classes = 2;
  spec.max_classes = 3;
  spec.dim = 6;
  spec.palette_size = 4;
  spec.class_separation = 1.5;
  spec.seed = seed;
  return gen_dataset(spec);
}

inline MetaConfig tiny_config() {
  MetaConfig c;
  c.neck = {8};
  c.inner_lr = 0.1;
  c.schedule = {0.01, 0.0, 20};
  c.inner_steps = 2;
  c.batch_size = 16;
  c.eval_interval = 5;
  c.patience = 100;
  c.finetune = {0.01, 30, 64, 5, 100};
  return c;
}

} // namespace taskmix::testing
