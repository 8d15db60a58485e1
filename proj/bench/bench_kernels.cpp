/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sdmae/kernels.hpp"

namespace k = sdmae::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <auto Fn>
void bm_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Fn(a, b, c, {n, n, n}, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}

template <auto Fn>
void bm_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{197};
  const auto src = random_vector(rows * cols, 3);
  std::vector<double> x(src.size());
  for (auto _ : state) {
    x = src;
    Fn(x, rows, cols, 0.125);
    benchmark::DoNotOptimize(x.data());
  }
}

template <auto Fn>
void bm_gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_vector(n, 4);
  std::vector<double> y(n);
  for (auto _ : state) {
    Fn(x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(bm_gemm<k::gemm_nn>)->Name("gemm_nn/parallel")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_gemm<k::reference::gemm_nn>)->Name("gemm_nn/reference")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_gemm<k::gemm_nt>)->Name("gemm_nt/parallel")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_gemm<k::reference::gemm_nt>)->Name("gemm_nt/reference")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_gemm<k::gemm_tn>)->Name("gemm_tn/parallel")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_gemm<k::reference::gemm_tn>)->Name("gemm_tn/reference")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bm_softmax<k::softmax_rows>)->Name("softmax/parallel")->Arg(64 * 6 * 197);
BENCHMARK(bm_softmax<k::reference::softmax_rows>)->Name("softmax/reference")->Arg(64 * 6 * 197);
BENCHMARK(bm_gelu<k::gelu_forward>)->Name("gelu/parallel")->Arg(1 << 20);
BENCHMARK(bm_gelu<k::reference::gelu_forward>)->Name("gelu/reference")->Arg(1 << 20);

BENCHMARK_MAIN();
