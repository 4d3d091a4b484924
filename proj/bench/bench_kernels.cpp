// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <span>
#include <vector>

#include "taskmix/kernels.hpp"
#include "taskmix/rng.hpp"

namespace {

using namespace taskmix;

std::span<const float> cspan(const std::vector<float> &v) { return v; }

struct Problem {
  std::size_t batch, in, out;
  std::vector<float> x, w, bias, y, dz, dw, dx;

  Problem(std::size_t b, std::size_t i, std::size_t o)
      : batch(b), in(i), out(o), x(b * i), w(i * o), bias(o), y(b * o), dz(b * o), dw(i * o), dx(b * i) {
    RngStream rng(7, "bench");
    for (auto *v : {&x, &w, &bias, &dz})
      for (float &f : *v)
        f = static_cast<float>(rng.normal());
  }
};

Problem &problem(const benchmark::State &state) {
  static Problem p(0, 0, 0);
  const auto n = static_cast<std::size_t>(state.range(0));
  if (p.batch != n)
    p = Problem(n, 768, 768);
  return p;
}

template <bool Parallel> void BM_Forward(benchmark::State &state) {
  Problem &p = problem(state);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::linear_forward(cspan(p.x), cspan(p.w), cspan(p.bias), std::span<float>(p.y), p.batch, p.in, p.out);
    else
      kernels::serial::linear_forward(cspan(p.x), cspan(p.w), cspan(p.bias), std::span<float>(p.y), p.batch, p.in, p.out);
    benchmark::DoNotOptimize(p.y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(p.batch * p.in * p.out));
}

template <bool Parallel> void BM_GradWeights(benchmark::State &state) {
  Problem &p = problem(state);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::grad_weights(cspan(p.dz), cspan(p.x), std::span<float>(p.dw), p.batch, p.in, p.out);
    else
      kernels::serial::grad_weights(cspan(p.dz), cspan(p.x), std::span<float>(p.dw), p.batch, p.in, p.out);
    benchmark::DoNotOptimize(p.dw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(p.batch * p.in * p.out));
}

template <bool Parallel> void BM_GradInput(benchmark::State &state) {
  Problem &p = problem(state);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::grad_input(cspan(p.dz), cspan(p.w), std::span<float>(p.dx), p.batch, p.in, p.out);
    else
      kernels::serial::grad_input(cspan(p.dz), cspan(p.w), std::span<float>(p.dx), p.batch, p.in, p.out);
    benchmark::DoNotOptimize(p.dx.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(p.batch * p.in * p.out));
}

} // namespace

BENCHMARK(BM_Forward<false>)->Arg(64)->Arg(256)->Name("forward/serial");
BENCHMARK(BM_Forward<true>)->Arg(64)->Arg(256)->Name("forward/parallel");
BENCHMARK(BM_GradWeights<false>)->Arg(64)->Arg(256)->Name("grad_weights/serial");
BENCHMARK(BM_GradWeights<true>)->Arg(64)->Arg(256)->Name("grad_weights/parallel");
BENCHMARK(BM_GradInput<false>)->Arg(64)->Arg(256)->Name("grad_input/serial");
BENCHMARK(BM_GradInput<true>)->Arg(64)->Arg(256)->Name("grad_input/parallel");

BENCHMARK_MAIN();
