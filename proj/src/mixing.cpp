// SPDX-License-Identifier: Apache-2.0
#include "taskmix/mixing.hpp"

#include <cmath>
#include <numeric>

#include "taskmix/error.hpp"

namespace taskmix {

void MixConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw ConfigError("mix.eta must be > 0");
  if (fixed_lambda && !(*fixed_lambda >= 0.0 && *fixed_lambda <= 1.0))
    throw ConfigError("mix.fixed_lambda must lie in [0, 1]");
}

double sample_gamma(double shape, RngStream &rng) {
  if (!(shape > 0.0))
    throw ConfigError("gamma shape must be > 0");
  if (shape < 1.0) {
    const double u = rng.uniform();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0, v = 0;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x)
      return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

double sample_beta(double eta, RngStream &rng) {
  if (!(eta > 0.0))
    throw ConfigError("Beta parameter eta must be > 0, got " + std::to_string(eta));
  for (;;) {
    const double g1 = sample_gamma(eta, rng);
    const double g2 = sample_gamma(eta, rng);
    if (g1 + g2 > 0.0)
      return g1 / (g1 + g2);
  }
}

Batch<float> mix_batches(const Batch<float> &a, const Batch<float> &b, double lambda) {
  if (a.x.rows != b.x.rows || a.x.cols != b.x.cols || a.y.rows != b.y.rows || a.y.cols != b.y.cols ||
      a.w.size() != b.w.size())
    throw ShapeError("mix_batches: operands differ in shape");
  const float l = static_cast<float>(lambda);
  const float m = static_cast<float>(1.0 - lambda);
  auto blend = [l, m](std::span<const float> p, std::span<const float> q, std::span<float> out) {
    // equal operands pass through, so mixing a batch with itself is exact
    for (std::size_t k = 0; k < p.size(); ++k)
      out[k] = p[k] == q[k] ? p[k] : l * p[k] + m * q[k];
  };
  Batch<float> out = a;
  blend(a.x.data, b.x.data, out.x.data);
  blend(a.y.data, b.y.data, out.y.data);
  blend(a.w, b.w, out.w);
  return out;
}

Batch<float> metamix_augment(const Batch<float> &batch, const MixConfig &mix, RngStream &rng) {
  const std::size_t rows = batch.size();
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher–Yates driven by the stream's own index draws
  for (std::size_t k = rows; k > 1; --k)
    std::swap(perm[k - 1], perm[rng.index(k)]);
  const double lambda = sample_beta(mix.eta, rng);
  const double used = mix.fixed_lambda.value_or(lambda);

  Batch<float> shuffled = batch;
  for (std::size_t r = 0; r < rows; ++r) {
    auto xs = batch.x.row(perm[r]);
    auto ys = batch.y.row(perm[r]);
    std::copy(xs.begin(), xs.end(), shuffled.x.row(r).begin());
    std::copy(ys.begin(), ys.end(), shuffled.y.row(r).begin());
  }
  Batch<float> mixed = mix_batches(batch, shuffled, used);
  mixed.w = batch.w; // both operands share w
  return mixed;
}

std::vector<SyntheticTaskBatch> taskmix_synthesize(std::span<const TaskBatches> per_task,
                                                   std::size_t n_synthetic, const MixConfig &mix,
                                                   RngStream &pair_rng,
                                                   std::span<RngStream> beta_rngs) {
  std::vector<SyntheticTaskBatch> out;
  if (n_synthetic == 0)
    return out;
  if (per_task.empty())
    throw UsageError("taskmix_synthesize: no tasks to mix");
  if (beta_rngs.size() < n_synthetic)
    throw UsageError("taskmix_synthesize: one Beta stream per synthetic task is required");
  const std::size_t t = per_task.size();
  std::vector<std::size_t> first(n_synthetic), second(n_synthetic);
  for (auto &i : first)
    i = pair_rng.index(t);
  for (auto &j : second)
    j = pair_rng.index(t);

  out.reserve(n_synthetic);
  for (std::size_t n = 0; n < n_synthetic; ++n) {
    const double drawn = sample_beta(mix.eta, beta_rngs[n]);
    const double lambda = mix.fixed_lambda.value_or(drawn);
    const TaskBatches &a = per_task[first[n]];
    const TaskBatches &b = per_task[second[n]];
    if (a.support.size() != b.support.size())
      throw ShapeError("taskmix_synthesize: tasks carry different numbers of support batches");
    SyntheticTaskBatch s;
    s.i = first[n];
    s.j = second[n];
    s.lambda = lambda;
    for (std::size_t k = 0; k < a.support.size(); ++k)
      s.batches.support.push_back(mix_batches(a.support[k], b.support[k], lambda));
    s.batches.query = mix_batches(a.query, b.query, lambda);
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace taskmix
