// SPDX-License-Identifier: Apache-2.0
#include "taskmix/metrics.hpp"

#include "taskmix/error.hpp"

namespace taskmix {

double macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                std::size_t n_classes) {
  if (predictions.size() != labels.size())
    throw ShapeError("macro_f1: predictions and labels differ in length");
  if (n_classes == 0)
    return 0.0;
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = predictions[i];
    const auto l = labels[i];
    if (p >= n_classes || l >= n_classes)
      throw UsageError("macro_f1: class id out of range");
    if (p == l) {
      ++tp[l];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    // 2PR/(P+R) = 2tp/(2tp+fp+fn), zero when the class never appears
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c] + fn[c]);
    if (denom > 0.0)
      sum += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return sum / static_cast<double>(n_classes);
}

std::vector<std::uint32_t> argmax_rows(const Matrix<float> &logits, std::size_t n_classes) {
  if (n_classes == 0 || n_classes > logits.cols)
    throw ShapeError("argmax_rows: class count exceeds head width");
  std::vector<std::uint32_t> out(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (row[c] > row[best])
        best = c;
    out[r] = static_cast<std::uint32_t>(best);
  }
  return out;
}

std::vector<std::uint32_t> predict(const ModelParams<float> &params, const Matrix<float> &x,
                                   std::size_t n_classes) {
  return argmax_rows(forward(params, x), n_classes);
}

double evaluate_split(const ModelParams<float> &params, const Task &task, Split split) {
  const Batch<float> b = split_batch(task, split);
  std::vector<std::uint32_t> labels;
  labels.reserve(task.splits.get(split).size());
  for (std::uint32_t i : task.splits.get(split))
    labels.push_back(task.labels[i]);
  return macro_f1(predict(params, b.x, task.n_classes), labels, task.n_classes);
}

} // namespace taskmix
