// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "taskmix/matrix.hpp"

namespace taskmix {

/// Features, soft labels (zero-padded to the head width) and the class-weight
/// vector for one draw of a task. The unit that is mixed and trained on.
template <class T> struct Batch {
  Matrix<T> x; // [B×D]
  Matrix<T> y; // [B×C_max], rows sum to 1
  std::vector<T> w; // [C_max], >= 0

  std::size_t size() const noexcept { return x.rows; }
  bool operator==(const Batch &) const = default;
};

template <class U, class T> Batch<U> batch_cast(const Batch<T> &b) {
  Batch<U> out{matrix_cast<U>(b.x), matrix_cast<U>(b.y), {}};
  out.w.reserve(b.w.size());
  for (const T &v : b.w)
    out.w.push_back(static_cast<U>(v));
  return out;
}

} // namespace taskmix
