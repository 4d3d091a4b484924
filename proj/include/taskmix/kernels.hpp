// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense kernels behind the Linear layers. `parallel` is what the network
// calls; `serial` is the naive reference the tests and the benchmark compare
// against. Every output element of a parallel kernel is produced by exactly
// one thread with a fixed summation order, so results do not depend on the
// thread count.

#include <cstddef>
#include <span>

namespace taskmix::kernels {

/// Work (multiply-adds) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {

/// y[b,o] = bias[o] + Σ_i x[b,i]·w[o,i]
template <class T>
void linear_forward(std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y, std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o) {
      T acc = bias[o];
      for (std::size_t i = 0; i < in; ++i)
        acc += x[b * in + i] * w[o * in + i];
      y[b * out + o] = acc;
    }
}

/// dw[o,i] = Σ_b dz[b,o]·x[b,i]
template <class T>
void grad_weights(std::span<const T> dz, std::span<const T> x, std::span<T> dw,
                  std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) {
      T acc{};
      for (std::size_t b = 0; b < batch; ++b)
        acc += dz[b * out + o] * x[b * in + i];
      dw[o * in + i] = acc;
    }
}

/// dx[b,i] = Σ_o dz[b,o]·w[o,i]
template <class T>
void grad_input(std::span<const T> dz, std::span<const T> w, std::span<T> dx,
                std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < in; ++i) {
      T acc{};
      for (std::size_t o = 0; o < out; ++o)
        acc += dz[b * out + o] * w[o * in + i];
      dx[b * in + i] = acc;
    }
}

/// db[o] = Σ_b dz[b,o]
template <class T>
void column_sum(std::span<const T> dz, std::span<T> db, std::size_t batch, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    T acc{};
    for (std::size_t b = 0; b < batch; ++b)
      acc += dz[b * out + o];
    db[o] = acc;
  }
}

} // namespace serial

namespace parallel {

namespace detail {

template <class T> inline T dot(const T *a, const T *b, std::size_t n) {
  T s0{}, s1{}, s2{}, s3{};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i)
    s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

} // namespace detail

template <class T>
void linear_forward(std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                    std::span<T> y, std::size_t batch, std::size_t in, std::size_t out) {
  const T *xp = x.data();
  const T *wp = w.data();
  const T *bp = bias.data();
  T *yp = y.data();
  const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static) if (batch * in * out > kParallelThreshold)
  for (long long b = 0; b < nb; ++b) {
    const T *xr = xp + b * in;
    T *yr = yp + b * out;
    for (std::size_t o = 0; o < out; ++o)
      yr[o] = bp[o] + detail::dot(xr, wp + o * in, in);
  }
}

template <class T>
void grad_weights(std::span<const T> dz, std::span<const T> x, std::span<T> dw,
                  std::size_t batch, std::size_t in, std::size_t out) {
  const T *dzp = dz.data();
  const T *xp = x.data();
  T *dwp = dw.data();
  const long long no = static_cast<long long>(out);
#pragma omp parallel for schedule(static) if (batch * in * out > kParallelThreshold)
  for (long long o = 0; o < no; ++o) {
    T *row = dwp + o * in;
    for (std::size_t i = 0; i < in; ++i)
      row[i] = T{};
    for (std::size_t b = 0; b < batch; ++b) {
      const T a = dzp[b * out + o];
      const T *xr = xp + b * in;
      for (std::size_t i = 0; i < in; ++i)
        row[i] += a * xr[i];
    }
  }
}

template <class T>
void grad_input(std::span<const T> dz, std::span<const T> w, std::span<T> dx,
                std::size_t batch, std::size_t in, std::size_t out) {
  const T *dzp = dz.data();
  const T *wp = w.data();
  T *dxp = dx.data();
  const long long nb = static_cast<long long>(batch);
#pragma omp parallel for schedule(static) if (batch * in * out > kParallelThreshold)
  for (long long b = 0; b < nb; ++b) {
    T *row = dxp + b * in;
    for (std::size_t i = 0; i < in; ++i)
      row[i] = T{};
    for (std::size_t o = 0; o < out; ++o) {
      const T a = dzp[b * out + o];
      const T *wr = wp + o * in;
      for (std::size_t i = 0; i < in; ++i)
        row[i] += a * wr[i];
    }
  }
}

template <class T>
void column_sum(std::span<const T> dz, std::span<T> db, std::size_t batch, std::size_t out) {
  // out is small (layer width); a serial sweep over contiguous rows is cheaper
  // than splitting columns across threads.
  for (std::size_t o = 0; o < out; ++o)
    db[o] = T{};
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o)
      db[o] += dz[b * out + o];
}

} // namespace parallel

} // namespace taskmix::kernels
