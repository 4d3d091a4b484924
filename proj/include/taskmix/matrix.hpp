// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "taskmix/error.hpp"

namespace taskmix {

/// Dense row-major matrix.
template <class T> struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c)
      throw ShapeError("matrix data does not match its shape");
  }

  T &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T &operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix &) const = default;
};

template <class U, class T> Matrix<U> matrix_cast(const Matrix<T> &m) {
  Matrix<U> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    out.data[i] = static_cast<U>(m.data[i]);
  return out;
}

} // namespace taskmix
