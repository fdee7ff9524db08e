// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "tiletrain/kernels.hpp"

namespace {

namespace k = tiletrain::kernels;

std::vector<float> random_tile(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = dist(rng);
  return v;
}

void BM_GemmTile(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tile(n * n, 1), b = random_tile(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    k::gemm_tile(a, b, c, n, n, n, 1.0f, 0.0f, false, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] =
      benchmark::Counter(k::gemm_cost(n, n, n) * static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_GemmTile)->RangeMultiplier(2)->Range(16, 256);

void BM_GemmTileTransposedA(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tile(n * n, 3), b = random_tile(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    k::gemm_tile(a, b, c, n, n, n, 1.0f, 1.0f, true, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] =
      benchmark::Counter(k::gemm_cost(n, n, n) * static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_GemmTileTransposedA)->Arg(64)->Arg(128);

void BM_SoftmaxColumns(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto t0 = random_tile(rows * cols, 5);
  std::vector<float> stats(2 * cols);
  for (auto _ : state) {
    auto t = t0;
    k::softmax_stats(t, rows, stats);
    k::softmax_apply(t, stats, rows);
    benchmark::DoNotOptimize(t.data());
  }
}
BENCHMARK(BM_SoftmaxColumns)->Arg(64)->Arg(512);

void BM_LayerNormForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{64};
  const auto x = random_tile(rows * cols, 6);
  const std::vector<float> gamma(rows, 1.0f), beta(rows, 0.0f);
  std::vector<float> stats(3 * cols), xhat(x.size()), y(x.size());
  for (auto _ : state) {
    k::norm_stats(x, rows, stats);
    k::norm_finalize(stats);
    k::normalize(x, stats, xhat, rows);
    k::scale_shift(xhat, gamma, beta, y);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LayerNormForward)->Arg(64)->Arg(512);

}  // namespace
