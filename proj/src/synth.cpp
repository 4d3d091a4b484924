// SPDX-License-Identifier: Apache-2.0
#include "taskmix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "taskmix/error.hpp"
#include "taskmix/rng.hpp"

namespace taskmix {

void SynthSpec::validate() const {
  if (train_tasks == 0 || test_tasks == 0)
    throw ConfigError("synth: task counts must be >= 1");
  if (dim == 0 || palette_size == 0 || min_classes == 0)
    throw ConfigError("synth: dim, palette_size and min_classes must be >= 1");
  if (min_classes > max_classes)
    throw ConfigError("synth: min_classes exceeds max_classes");
  if (max_classes > palette_size)
    throw ConfigError("synth: max_classes exceeds the palette size");
  if (examples_per_task < max_classes * kMinExamplesPerClass)
    throw ConfigError("synth: examples_per_task too small for " + std::to_string(max_classes) + " classes");
  if (!(noise_scale >= 0.0) || !(task_shift_scale >= 0.0) || !(class_separation > 0.0) || !(label_skew >= 0.0))
    throw ConfigError("synth: scales must be non-negative and class_separation > 0");
}

SynthSpec preset(std::string_view name, double scale) {
  if (!(scale > 0.0 && scale <= 1.0))
    throw ConfigError("preset scale must lie in (0, 1]");
  SynthSpec s;
  if (name == "long") {
    s.train_tasks = 7;
    s.test_tasks = 4;
    s.examples_per_task = static_cast<std::size_t>(std::llround(6884.0 * scale));
    s.min_classes = 4;
    s.max_classes = 11;
  } else if (name == "wide") {
    s.train_tasks = 54;
    s.test_tasks = 12;
    s.examples_per_task = static_cast<std::size_t>(std::llround(1269.0 * scale));
    s.min_classes = 2;
    s.max_classes = 3;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected long or wide)");
  }
  return s;
}

namespace {

/// Orthonormalize the columns of a D×D matrix in place (modified Gram–Schmidt).
void orthonormalize(Matrix<double> &q) {
  const std::size_t d = q.rows;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r)
        dot += q(r, c) * q(r, p);
      for (std::size_t r = 0; r < d; ++r)
        q(r, c) -= dot * q(r, p);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      norm += q(r, c) * q(r, c);
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < d; ++r)
      q(r, c) /= norm;
  }
}

} // namespace

Dataset gen_dataset(const SynthSpec &spec) {
  spec.validate();
  const std::size_t d = spec.dim;
  Matrix<double> palette(spec.palette_size, d);
  {
    RngStream rng(spec.seed, "synth", 0);
    for (double &v : palette.data)
      v = spec.class_separation * rng.normal();
  }

  Dataset ds;
  ds.dim = d;
  const std::size_t total = spec.train_tasks + spec.test_tasks;
  for (std::size_t t = 0; t < total; ++t) {
    RngStream rng(spec.seed, "synth", 1 + t);
    Task task;
    const bool is_train = t < spec.train_tasks;
    const std::size_t ordinal = is_train ? t : t - spec.train_tasks;
    task.id = std::string(is_train ? "train-" : "test-") + (ordinal < 10 ? "0" : "") + std::to_string(ordinal);
    task.role = is_train ? Role::meta_train : Role::meta_test;
    task.domain = "synthetic";
    task.n_classes = spec.min_classes + rng.index(spec.max_classes - spec.min_classes + 1);

    std::vector<std::size_t> chosen(spec.palette_size);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    for (std::size_t k = 0; k < task.n_classes; ++k)
      std::swap(chosen[k], chosen[k + rng.index(spec.palette_size - k)]);
    chosen.resize(task.n_classes);

    Matrix<double> rotation(d, d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c)
        rotation(r, c) = (r == c ? 1.0 : 0.0) + spec.task_shift_scale * rng.normal() / std::sqrt(static_cast<double>(d));
    orthonormalize(rotation);
    std::vector<double> shift(d);
    for (double &v : shift)
      v = spec.task_shift_scale * spec.class_separation * rng.normal();

    // this task's view of its class centroids
    Matrix<double> centroids(task.n_classes, d);
    for (std::size_t c = 0; c < task.n_classes; ++c)
      for (std::size_t r = 0; r < d; ++r) {
        double acc = shift[r];
        for (std::size_t k = 0; k < d; ++k)
          acc += rotation(r, k) * palette(chosen[c], k);
        centroids(c, r) = acc;
      }

    const std::size_t n = spec.examples_per_task;
    std::vector<double> zipf(task.n_classes);
    for (std::size_t c = 0; c < task.n_classes; ++c)
      zipf[c] = 1.0 / std::pow(static_cast<double>(c + 1), spec.label_skew);
    std::discrete_distribution<std::uint32_t> skewed(zipf.begin(), zipf.end());
    std::vector<std::uint32_t> labels;
    labels.reserve(n);
    for (std::uint32_t c = 0; c < task.n_classes; ++c)
      labels.insert(labels.end(), kMinExamplesPerClass, c);
    while (labels.size() < n)
      labels.push_back(skewed(rng.engine()));
    std::shuffle(labels.begin(), labels.end(), rng.engine());

    task.features = Matrix<float>(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < d; ++r)
        task.features(i, r) = static_cast<float>(centroids(labels[i], r) + spec.noise_scale * rng.normal());
    task.labels = std::move(labels);

    RngStream split_rng(spec.seed, "split", t);
    task.splits = auto_split(task.labels, task.n_classes, spec.fractions, split_rng);
    ds.tasks.push_back(std::move(task));
  }
  finalize_dataset(ds);
  return ds;
}

} // namespace taskmix
