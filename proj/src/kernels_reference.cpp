/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <cmath>
#include <numbers>

#include "sdmae/kernels.hpp"

namespace sdmae::kernels::reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) s += a[i * d.k + p] * b[p * d.n + j];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + s : s;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) s += a[i * d.k + p] * b[j * d.k + p];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + s : s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims d, bool accumulate) {
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) s += a[p * d.m + i] * b[p * d.n + j];
      c[i * d.n + j] = accumulate ? c[i * d.n + j] + s : s;
    }
  }
}

void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols, double scale) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::fmax(mx, x[r * cols + j] * scale);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] * scale - mx);
    for (std::size_t j = 0; j < cols; ++j)
      x[r * cols + j] = std::exp(x[r * cols + j] * scale - mx) / sum;
  }
}

void gelu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
}

}  // namespace sdmae::kernels::reference
