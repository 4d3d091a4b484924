// SPDX-License-Identifier: Apache-2.0
#pragma once

// Inner-loop adaptation and the meta-gradient through it.
//
// An Objective supplies, for its params_type P and batch_type B:
//   obj.gradient(p, b) -> {loss, grad}      ∇L(b; p)
//   obj.hvp(p, b, v)   -> P                 ∇²L(b; p)·v
// NetworkObjective (nn.hpp) is the production one; tests plug in closed-form
// objectives to check the chain rule by hand.

#include <cstddef>
#include <span>
#include <vector>

#include "taskmix/error.hpp"
#include "taskmix/optim.hpp"

namespace taskmix {

enum class GradMode { first_order, exact };

template <class P, class B> struct TraceStep {
  P params; // θ before this step
  B batch;  // support batch used for the step
  double lr;
};

/// The n inner SGD steps that produced θ_i, kept for exact meta-gradients.
template <class P, class B> struct AdaptationTrace {
  std::vector<TraceStep<P, B>> steps;
  std::size_t size() const noexcept { return steps.size(); }
};

template <class P, class B> struct Adapted {
  P params;
  AdaptationTrace<P, B> trace; // empty unless recorded
};

/// n = support.size() SGD steps from a copy of θ, one support batch per step.
template <class Obj, class P = typename Obj::params_type, class B = typename Obj::batch_type>
Adapted<P, B> inner_adapt(const Obj &obj, const P &theta, std::span<const B> support, double lr,
                          bool record_trace) {
  Adapted<P, B> out{theta, {}};
  for (const B &batch : support) {
    auto lg = obj.gradient(out.params, batch);
    if (record_trace)
      out.trace.steps.push_back({out.params, batch, lr});
    out.params = sgd_step(std::move(out.params), lg.grad, lr);
  }
  return out;
}

template <class P> struct MetaGradient {
  double query_loss = 0.0;
  P grad;
};

/// Gradient of scale·Σ_q L(q; θ_i) w.r.t. θ.
///
/// first_order: the query gradient at θ_i is returned as is.
/// exact: it is pulled back through every recorded SGD step,
///   g ← g − α·H(θ_k; support_k)·g, which includes the second-order terms.
/// With an empty trace both modes return the same value.
template <class Obj, class P = typename Obj::params_type, class B = typename Obj::batch_type>
MetaGradient<P> meta_gradient(const Obj &obj, const P &adapted, const AdaptationTrace<P, B> *trace,
                              std::span<const B> queries, GradMode mode, double scale = 1.0) {
  if (queries.empty())
    throw UsageError("meta_gradient: no query batches");
  if (mode == GradMode::exact && trace == nullptr)
    throw UsageError("meta_gradient: exact mode requires the adaptation trace");

  MetaGradient<P> out{0.0, {}};
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto lg = obj.gradient(adapted, queries[q]);
    out.query_loss += static_cast<double>(lg.loss);
    if (q == 0) {
      out.grad = std::move(lg.grad);
    } else {
      auto acc = out.grad.values();
      auto add = lg.grad.values();
      for (std::size_t i = 0; i < acc.size(); ++i)
        acc[i] += add[i];
    }
  }
  if (scale != 1.0) {
    using T = typename decltype(out.grad.values())::value_type;
    const T s = static_cast<T>(scale);
    for (auto &v : out.grad.values())
      v *= s;
    out.query_loss *= scale;
  }
  if (mode == GradMode::first_order)
    return out;

  for (std::size_t k = trace->steps.size(); k-- > 0;) {
    const auto &step = trace->steps[k];
    P hv = obj.hvp(step.params, step.batch, out.grad);
    out.grad = sgd_step(std::move(out.grad), hv, step.lr);
  }
  return out;
}

} // namespace taskmix
