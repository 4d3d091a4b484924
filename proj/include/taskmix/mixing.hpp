// SPDX-License-Identifier: Apache-2.0
#pragma once

// MixUp on batches, the Beta(η, η) sampler, intra-task MetaMix and
// cross-task TaskMix synthesis.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "taskmix/batch.hpp"
#include "taskmix/rng.hpp"

namespace taskmix {

struct MixConfig {
  double eta = 0.5;
  /// Synthetic tasks per meta-step; empty means N = T.
  std::optional<std::size_t> n_synthetic;
  /// Replaces every Beta draw when set (reduction tests).
  std::optional<double> fixed_lambda;

  void validate() const;
  std::size_t synthetic_count(std::size_t meta_train_tasks) const {
    return n_synthetic.value_or(meta_train_tasks);
  }
};

/// Gamma(shape, 1) by Marsaglia–Tsang; shape < 1 uses the U^{1/shape} boost.
double sample_gamma(double shape, RngStream &rng);

/// λ ~ Beta(η, η) as g1/(g1+g2) with g1, g2 ~ Gamma(η, 1).
double sample_beta(double eta, RngStream &rng);

/// λ·a + (1−λ)·b on features, soft labels and class weights alike.
Batch<float> mix_batches(const Batch<float> &a, const Batch<float> &b, double lambda);

/// Mixes the batch with a uniformly permuted copy of itself, one λ for all rows.
Batch<float> metamix_augment(const Batch<float> &batch, const MixConfig &mix, RngStream &rng);

/// One task's draws for a meta-step: n support batches and a query batch.
struct TaskBatches {
  std::vector<Batch<float>> support;
  Batch<float> query;
};

struct SyntheticTaskBatch {
  TaskBatches batches;
  std::size_t i = 0;
  std::size_t j = 0;
  double lambda = 1.0;
};

/// N synthetic tasks: pairs (i, j) drawn uniformly from [0, T−1] with
/// `pair_rng`; the n-th pair's λ comes from `beta_rngs[n]`. Support batches
/// are mixed position-wise with support, query with query, all with that λ.
std::vector<SyntheticTaskBatch> taskmix_synthesize(std::span<const TaskBatches> per_task,
                                                   std::size_t n_synthetic, const MixConfig &mix,
                                                   RngStream &pair_rng,
                                                   std::span<RngStream> beta_rngs);

} // namespace taskmix
