/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sdmae/error.hpp"

namespace sdmae::kernels {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

constexpr std::size_t kRowTile = 4;
constexpr std::size_t kColBlock = 256;
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

void check_gemm(std::size_t a, std::size_t b, std::size_t c, GemmDims d, const char* name) {
  if (a < d.m * d.k || b < d.k * d.n || c < d.m * d.n) {
    throw DimensionError(std::string(name) + ": buffer too small for dims m=" +
                         std::to_string(d.m) + " n=" + std::to_string(d.n) +
                         " k=" + std::to_string(d.k));
  }
}

// Shared tile body: rows [i0, i1) of C accumulate a_elem(r, p) * B[p, :].
template <class AElem>
inline void accumulate_tile(AElem&& a_elem, const double* b, double* c, std::size_t i0,
                            std::size_t i1, GemmDims d) {
  for (std::size_t j0 = 0; j0 < d.n; j0 += kColBlock) {
    const std::size_t j1 = std::min(d.n, j0 + kColBlock);
    for (std::size_t p = 0; p < d.k; ++p) {
      const double* brow = b + p * d.n;
      for (std::size_t i = i0; i < i1; ++i) {
        const double av = a_elem(i, p);
        double* crow = c + i * d.n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  check_gemm(a.size(), b.size(), c.size(), d, "gemm_nn");
  if (!accumulate) std::fill_n(c.data(), d.m * d.n, 0.0);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto tiles = static_cast<std::int64_t>((d.m + kRowTile - 1) / kRowTile);
  const bool par = d.m * d.n * d.k >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t t = 0; t < tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kRowTile;
    const std::size_t i1 = std::min(d.m, i0 + kRowTile);
    accumulate_tile([&](std::size_t i, std::size_t p) { return ap[i * d.k + p]; }, bp, cp, i0,
                    i1, d);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  check_gemm(a.size(), b.size(), c.size(), d, "gemm_nt");
  // B is (n, k); transpose once so the inner loop streams contiguous rows.
  std::vector<double> bt(d.k * d.n);
  for (std::size_t j = 0; j < d.n; ++j)
    for (std::size_t p = 0; p < d.k; ++p) bt[p * d.n + j] = b[j * d.k + p];
  gemm_nn(a, bt, c, d, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  check_gemm(a.size(), b.size(), c.size(), d, "gemm_tn");
  if (!accumulate) std::fill_n(c.data(), d.m * d.n, 0.0);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto tiles = static_cast<std::int64_t>((d.m + kRowTile - 1) / kRowTile);
  const bool par = d.m * d.n * d.k >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::int64_t t = 0; t < tiles; ++t) {
    const std::size_t i0 = static_cast<std::size_t>(t) * kRowTile;
    const std::size_t i1 = std::min(d.m, i0 + kRowTile);
    accumulate_tile([&](std::size_t i, std::size_t p) { return ap[p * d.m + i]; }, bp, cp, i0,
                    i1, d);
  }
}

void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols, double scale) {
  if (x.size() < rows * cols) throw DimensionError("softmax_rows: buffer too small");
  double* xp = x.data();
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelWork)
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows); ++r) {
    double* row = xp + static_cast<std::size_t>(r) * cols;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j] * scale);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] * scale - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const double* xp = x.data();
  double* yp = y.data();
#pragma omp parallel for schedule(static) if (n >= kParallelWork)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double v = xp[i];
    yp[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  const std::size_t n = x.size();
  const double* xp = x.data();
  const double* gp = dy.data();
  double* dp = dx.data();
  const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * kInvSqrt2;
#pragma omp parallel for schedule(static) if (n >= kParallelWork)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
    const double v = xp[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
    dp[i] = gp[i] * (cdf + v * pdf);
  }
}

void column_sums(std::span<const double> x, std::size_t rows, std::size_t cols,
                 std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j];
  }
}

}  // namespace sdmae::kernels
