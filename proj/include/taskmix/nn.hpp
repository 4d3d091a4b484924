// SPDX-License-Identifier: Apache-2.0
#pragma once

// Linear-PReLU neck + linear head: forward pass, weighted cross-entropy,
// reverse-mode gradients and Hessian-vector products.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "taskmix/batch.hpp"
#include "taskmix/dual.hpp"
#include "taskmix/error.hpp"
#include "taskmix/kernels.hpp"
#include "taskmix/matrix.hpp"
#include "taskmix/rng.hpp"

namespace taskmix {

/// Layer sizes: input dim, neck widths (possibly none) and head width C_max.
struct Geometry {
  std::size_t input_dim = 0;
  std::vector<std::size_t> neck;
  std::size_t classes = 0;

  /// Throws ConfigError on any zero dimension.
  void validate() const;

  std::size_t width() const noexcept { return neck.empty() ? input_dim : neck.back(); }
  std::size_t layer_input(std::size_t k) const noexcept { return k == 0 ? input_dim : neck[k - 1]; }

  bool operator==(const Geometry &) const = default;
};

/// Meta-parameters θ in one flat buffer. Per neck layer k the buffer holds
/// W_k [out×in], b_k [out], slope_k [out]; then head W [C×width], head b [C].
template <class T> class ModelParams {
public:
  using value_type = T;

  ModelParams() = default;

  explicit ModelParams(Geometry geometry) : geom_(std::move(geometry)) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < geom_.neck.size(); ++k) {
      layer_offsets_.push_back(offset);
      offset += geom_.neck[k] * (geom_.layer_input(k) + 2);
    }
    head_offset_ = offset;
    offset += geom_.classes * (geom_.width() + 1);
    data_.assign(offset, T{});
  }

  const Geometry &geometry() const noexcept { return geom_; }
  std::size_t num_layers() const noexcept { return geom_.neck.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::span<T> weights(std::size_t k) { return slice(layer_offsets_[k], geom_.neck[k] * geom_.layer_input(k)); }
  std::span<const T> weights(std::size_t k) const { return slice(layer_offsets_[k], geom_.neck[k] * geom_.layer_input(k)); }
  std::span<T> bias(std::size_t k) { return slice(bias_offset(k), geom_.neck[k]); }
  std::span<const T> bias(std::size_t k) const { return slice(bias_offset(k), geom_.neck[k]); }
  std::span<T> slope(std::size_t k) { return slice(bias_offset(k) + geom_.neck[k], geom_.neck[k]); }
  std::span<const T> slope(std::size_t k) const { return slice(bias_offset(k) + geom_.neck[k], geom_.neck[k]); }
  std::span<T> head_weights() { return slice(head_offset_, geom_.classes * geom_.width()); }
  std::span<const T> head_weights() const { return slice(head_offset_, geom_.classes * geom_.width()); }
  std::span<T> head_bias() { return slice(head_offset_ + geom_.classes * geom_.width(), geom_.classes); }
  std::span<const T> head_bias() const { return slice(head_offset_ + geom_.classes * geom_.width(), geom_.classes); }

  /// Head weights and bias as one contiguous range (used to swap heads).
  std::span<T> head() { return slice(head_offset_, data_.size() - head_offset_); }
  std::span<const T> head() const { return slice(head_offset_, data_.size() - head_offset_); }

  bool operator==(const ModelParams &) const = default;

private:
  std::size_t bias_offset(std::size_t k) const {
    return layer_offsets_[k] + geom_.neck[k] * geom_.layer_input(k);
  }
  std::span<T> slice(std::size_t off, std::size_t n) { return {data_.data() + off, n}; }
  std::span<const T> slice(std::size_t off, std::size_t n) const { return {data_.data() + off, n}; }

  Geometry geom_;
  std::vector<std::size_t> layer_offsets_;
  std::size_t head_offset_ = 0;
  std::vector<T> data_;
};

/// ∂loss/∂θ, shape-congruent with the parameters it was taken from.
template <class T> using GradientSet = ModelParams<T>;

template <class U, class T> ModelParams<U> params_cast(const ModelParams<T> &p) {
  ModelParams<U> out(p.geometry());
  auto src = p.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<U>(src[i]);
  return out;
}

inline constexpr double kInitialSlope = 0.25;

/// Glorot-uniform weights, zero biases, PReLU slopes 0.25.
template <class T> ModelParams<T> init_params(const Geometry &geometry, RngStream &rng) {
  geometry.validate();
  ModelParams<T> p(geometry);
  auto fill = [&rng](std::span<T> w, std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (T &v : w)
      v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  };
  for (std::size_t k = 0; k < p.num_layers(); ++k) {
    fill(p.weights(k), geometry.layer_input(k), geometry.neck[k]);
    for (T &s : p.slope(k))
      s = static_cast<T>(kInitialSlope);
  }
  fill(p.head_weights(), geometry.width(), geometry.classes);
  return p;
}

template <class T> constexpr T prelu(T x, T slope) { return x > T{} ? x : slope * x; }

/// Intermediate activations kept by the forward pass for backward.
template <class T> struct ForwardCache {
  std::vector<Matrix<T>> pre;  // z_k = h_{k-1}·W_kᵀ + b_k
  std::vector<Matrix<T>> post; // h_k = prelu(z_k); post[0] is the input
  Matrix<T> logits;
};

namespace detail {

template <class T> void check_input(const ModelParams<T> &params, const Matrix<T> &x) {
  if (x.cols != params.geometry().input_dim)
    throw ShapeError("feature width " + std::to_string(x.cols) + " does not match input dim " +
                     std::to_string(params.geometry().input_dim));
}

template <class T> void check_finite(std::span<const T> v, const char *what) {
  for (const T &e : v)
    if (!is_finite(e))
      throw NumericError(std::string("non-finite value in ") + what);
}

} // namespace detail

template <class T> ForwardCache<T> forward_cached(const ModelParams<T> &params, const Matrix<T> &x) {
  detail::check_input(params, x);
  const auto &g = params.geometry();
  const std::size_t batch = x.rows;
  ForwardCache<T> cache;
  cache.post.push_back(x);
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    const std::size_t in = g.layer_input(k);
    const std::size_t out = g.neck[k];
    Matrix<T> z(batch, out);
    kernels::parallel::linear_forward<T>(cache.post.back().data, params.weights(k), params.bias(k),
                                         z.data, batch, in, out);
    Matrix<T> h(batch, out);
    auto slope = params.slope(k);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < out; ++j)
        h(b, j) = prelu(z(b, j), slope[j]);
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(h));
  }
  cache.logits = Matrix<T>(batch, g.classes);
  kernels::parallel::linear_forward<T>(cache.post.back().data, params.head_weights(),
                                       params.head_bias(), cache.logits.data, batch, g.width(),
                                       g.classes);
  return cache;
}

/// logits = head(neck(x)), one row per input row.
template <class T> Matrix<T> forward(const ModelParams<T> &params, const Matrix<T> &x) {
  return std::move(forward_cached(params, x).logits);
}

/// Mean over rows of Σ_c −w_c·y_c·log softmax(logits)_c. When `dlogits` is
/// non-null it receives ∂loss/∂logits.
template <class T>
T weighted_ce(const Matrix<T> &logits, const Matrix<T> &labels, std::span<const T> class_weights,
              Matrix<T> *dlogits = nullptr) {
  using R = typename scalar_traits<T>::real;
  using std::exp;
  using std::log;
  if (labels.rows != logits.rows || labels.cols != logits.cols || class_weights.size() != logits.cols)
    throw ShapeError("loss operands have mismatched shapes");
  detail::check_finite<T>(logits.data, "logits");
  detail::check_finite<T>(labels.data, "labels");
  detail::check_finite<T>(class_weights, "class weights");

  const std::size_t batch = logits.rows;
  const std::size_t classes = logits.cols;
  if (dlogits)
    *dlogits = Matrix<T>(batch, classes);
  if (batch == 0)
    return T{};
  const T inv_batch = T(R(1) / static_cast<R>(batch));
  T total{};
  for (std::size_t b = 0; b < batch; ++b) {
    auto z = logits.row(b);
    auto y = labels.row(b);
    T top = z[0];
    for (std::size_t c = 1; c < classes; ++c)
      if (top < z[c])
        top = z[c];
    T denom{};
    for (std::size_t c = 0; c < classes; ++c)
      denom += exp(z[c] - top);
    const T lse = top + log(denom);
    T row_loss{};
    T row_weight{};
    for (std::size_t c = 0; c < classes; ++c) {
      const T wy = class_weights[c] * y[c];
      if (real_part(wy) != R(0))
        row_loss -= wy * (z[c] - lse);
      row_weight += wy;
    }
    total += row_loss;
    if (dlogits) {
      auto d = dlogits->row(b);
      for (std::size_t c = 0; c < classes; ++c)
        d[c] = (row_weight * exp(z[c] - lse) - class_weights[c] * y[c]) * inv_batch;
    }
  }
  return total * inv_batch;
}

template <class T> struct LossAndGradient {
  T loss{};
  GradientSet<T> grad;
};

/// Exact reverse-mode gradient of weighted_ce∘forward w.r.t. every parameter.
template <class T> LossAndGradient<T> backward(const ModelParams<T> &params, const Batch<T> &batch) {
  const auto &g = params.geometry();
  if (batch.y.cols != g.classes || batch.w.size() != g.classes || batch.y.rows != batch.x.rows)
    throw ShapeError("batch label width does not match head width");
  ForwardCache<T> cache = forward_cached(params, batch.x);
  LossAndGradient<T> out{T{}, GradientSet<T>(g)};
  Matrix<T> delta;
  out.loss = weighted_ce<T>(cache.logits, batch.y, batch.w, &delta);

  const std::size_t rows = batch.x.rows;
  GradientSet<T> &grad = out.grad;
  kernels::parallel::grad_weights<T>(delta.data, cache.post.back().data, grad.head_weights(), rows,
                                     g.width(), g.classes);
  kernels::parallel::column_sum<T>(delta.data, grad.head_bias(), rows, g.classes);
  if (params.num_layers() == 0)
    return out;

  Matrix<T> dh(rows, g.width());
  kernels::parallel::grad_input<T>(delta.data, params.head_weights(), dh.data, rows, g.width(),
                                   g.classes);
  for (std::size_t kk = params.num_layers(); kk-- > 0;) {
    const std::size_t in = g.layer_input(kk);
    const std::size_t width = g.neck[kk];
    const Matrix<T> &z = cache.pre[kk];
    auto slope = params.slope(kk);
    auto dslope = grad.slope(kk);
    for (T &v : dslope)
      v = T{};
    // dh becomes dz in place
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t j = 0; j < width; ++j) {
        const T zv = z(b, j);
        if (!(zv > T{})) {
          dslope[j] += dh(b, j) * zv;
          dh(b, j) = dh(b, j) * slope[j];
        }
      }
    kernels::parallel::grad_weights<T>(dh.data, cache.post[kk].data, grad.weights(kk), rows, in,
                                       width);
    kernels::parallel::column_sum<T>(dh.data, grad.bias(kk), rows, width);
    if (kk > 0) {
      Matrix<T> dprev(rows, in);
      kernels::parallel::grad_input<T>(dh.data, params.weights(kk), dprev.data, rows, in, width);
      dh = std::move(dprev);
    }
  }
  return out;
}

/// H(θ)·v for the batch loss, by forward-over-reverse differentiation.
template <class T>
GradientSet<T> hessian_vector_product(const ModelParams<T> &params, const Batch<T> &batch,
                                      const GradientSet<T> &direction) {
  if (direction.size() != params.size())
    throw ShapeError("direction is not shape-congruent with parameters");
  using D = Dual<T>;
  ModelParams<D> lifted(params.geometry());
  auto src = params.values();
  auto dir = direction.values();
  auto dst = lifted.values();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = D(src[i], dir[i]);
  const auto result = backward(lifted, batch_cast<D>(batch));
  GradientSet<T> hv(params.geometry());
  auto rv = result.grad.values();
  auto out = hv.values();
  for (std::size_t i = 0; i < rv.size(); ++i)
    out[i] = rv[i].du;
  return hv;
}

/// The network as a differentiable objective for the unrolled inner loop.
template <class T> struct NetworkObjective {
  using params_type = ModelParams<T>;
  using batch_type = Batch<T>;

  LossAndGradient<T> gradient(const params_type &p, const batch_type &b) const { return backward(p, b); }
  params_type hvp(const params_type &p, const batch_type &b, const params_type &v) const {
    return hessian_vector_product(p, b, v);
  }
};

} // namespace taskmix
