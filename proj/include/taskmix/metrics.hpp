// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "taskmix/matrix.hpp"
#include "taskmix/nn.hpp"
#include "taskmix/task_data.hpp"

namespace taskmix {

/// Unweighted mean over classes of per-class F1; a class with no predicted
/// and no actual positives scores 0.
double macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                std::size_t n_classes);

/// Row-wise argmax over the first `n_classes` logits (lowest index on ties).
std::vector<std::uint32_t> argmax_rows(const Matrix<float> &logits, std::size_t n_classes);

std::vector<std::uint32_t> predict(const ModelParams<float> &params, const Matrix<float> &x,
                                   std::size_t n_classes);

double evaluate_split(const ModelParams<float> &params, const Task &task, Split split);

/// Macro F1 on the task's test split, padded-class logits masked out.
inline double evaluate_model(const ModelParams<float> &params, const Task &task) {
  return evaluate_split(params, task, Split::test);
}

} // namespace taskmix
