/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <span>

// Dense kernels used by every layer. The functions in `sdmae::kernels` are
// OpenMP-parallel over output rows; `sdmae::kernels::reference` holds plain
// serial loops with the same contracts, kept for tests and benchmarks.
//
// Every parallel kernel assigns each output element to exactly one thread and
// sums in a fixed order, so results do not depend on the thread count.

namespace sdmae::kernels {

struct GemmDims {
  std::size_t m;  // rows of C
  std::size_t n;  // cols of C
  std::size_t k;  // contraction length
};

/// C(m,n) (+)= A(m,k) * B(k,n)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);

/// C(m,n) (+)= A(m,k) * B(n,k)^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);

/// C(m,n) (+)= A(k,m)^T * B(k,n)
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);

/// Row-wise softmax of `x` (rows x cols) scaled by `scale` before exponentiation.
void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols, double scale);

/// Exact (erf) GELU.
void gelu_forward(std::span<const double> x, std::span<double> y);
/// dx = dy * gelu'(x)
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

/// out[j] += sum over rows of x(rows, cols)[., j]
void column_sums(std::span<const double> x, std::size_t rows, std::size_t cols,
                 std::span<double> out);

/// Number of OpenMP threads kernels will use (1 when built without OpenMP).
int max_threads();

namespace reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             GemmDims dims, bool accumulate);
void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols, double scale);
void gelu_forward(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

}  // namespace reference

}  // namespace sdmae::kernels
