// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

namespace taskmix {

/// Forward-mode dual number a + b·ε with ε² = 0.
///
/// Running the reverse-mode backward pass over Dual<T> with parameters
/// θ + ε·v yields ∇L(θ) in the real part and the Hessian-vector product
/// H(θ)·v in the dual part (forward-over-reverse). Comparisons look at the
/// real part only, so branchy code (PReLU, max-subtraction) differentiates
/// along the branch taken at θ.
template <class T> struct Dual {
  T re{};
  T du{};

  constexpr Dual() = default;
  constexpr Dual(T r) : re(r) {} // NOLINT: implicit lift of constants
  constexpr Dual(T r, T d) : re(r), du(d) {}

  constexpr Dual &operator+=(const Dual &o) { re += o.re; du += o.du; return *this; }
  constexpr Dual &operator-=(const Dual &o) { re -= o.re; du -= o.du; return *this; }
  constexpr Dual &operator*=(const Dual &o) {
    du = du * o.re + re * o.du;
    re *= o.re;
    return *this;
  }
  constexpr Dual &operator/=(const Dual &o) {
    du = (du * o.re - re * o.du) / (o.re * o.re);
    re /= o.re;
    return *this;
  }
};

template <class T> constexpr Dual<T> operator+(Dual<T> a, const Dual<T> &b) { return a += b; }
template <class T> constexpr Dual<T> operator-(Dual<T> a, const Dual<T> &b) { return a -= b; }
template <class T> constexpr Dual<T> operator*(Dual<T> a, const Dual<T> &b) { return a *= b; }
template <class T> constexpr Dual<T> operator/(Dual<T> a, const Dual<T> &b) { return a /= b; }
template <class T> constexpr Dual<T> operator-(const Dual<T> &a) { return {-a.re, -a.du}; }

template <class T> constexpr bool operator<(const Dual<T> &a, const Dual<T> &b) { return a.re < b.re; }
template <class T> constexpr bool operator>(const Dual<T> &a, const Dual<T> &b) { return a.re > b.re; }

template <class T> Dual<T> exp(const Dual<T> &a) {
  const T e = std::exp(a.re);
  return {e, e * a.du};
}

template <class T> Dual<T> log(const Dual<T> &a) { return {std::log(a.re), a.du / a.re}; }

/// Real part of a scalar; identity for plain floating types.
template <class T> constexpr T real_part(T x) { return x; }
template <class T> constexpr T real_part(const Dual<T> &x) { return x.re; }

template <class T> bool is_finite(T x) { return std::isfinite(x); }
template <class T> bool is_finite(const Dual<T> &x) {
  return std::isfinite(x.re) && std::isfinite(x.du);
}

template <class T> struct scalar_traits { using real = T; };
template <class T> struct scalar_traits<Dual<T>> { using real = T; };

} // namespace taskmix
