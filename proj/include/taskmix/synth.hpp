// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic multi-task datasets in two regimes: "long" (few tasks, many
// examples each) and "wide" (many tasks, few examples each).
//
// Every task picks its classes from one shared palette of centroids and
// sees them through its own near-identity rotation plus a shift, so tasks
// are related but distinct. Zipf-skewed label frequencies make the classes
// imbalanced.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "taskmix/task_data.hpp"

namespace taskmix {

struct SynthSpec {
  std::size_t train_tasks = 7;
  std::size_t test_tasks = 4;
  std::size_t examples_per_task = 344;
  std::size_t min_classes = 4;
  std::size_t max_classes = 11;
  std::size_t dim = 32;
  std::size_t palette_size = 16;
  double task_shift_scale = 0.5;
  double class_separation = 0.3;
  double noise_scale = 1.0;
  double label_skew = 1.0; // Zipf exponent
  std::uint64_t seed = 0;
  SplitFractions fractions;

  void validate() const;
};


/// Each class is guaranteed this many examples before the skewed draw.
inline constexpr std::size_t kMinExamplesPerClass = 5;

/// long: 11 tasks (7 train / 4 test), round(6884·scale) examples each.
/// wide: 66 tasks (54 train / 12 test), round(1269·scale) examples each.
SynthSpec preset(std::string_view name, double scale);

Dataset gen_dataset(const SynthSpec &spec);

} // namespace taskmix
