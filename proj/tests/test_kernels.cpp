/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <cmath>
#include <limits>

#include <omp.h>

#include "sdmae/kernels.hpp"
#include "support.hpp"

using namespace sdmae;
namespace k = sdmae::kernels;

namespace {

std::vector<double> rnd(std::size_t n, std::uint64_t seed) { return test::random_tensor({n}, seed).values(); }

}  // namespace

TEST_CASE("parallel GEMMs equal the serial reference on odd shapes") {
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 48, 192}, {130, 260, 70}};
  std::uint64_t seed = 1;
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], kk = s[2];
    CAPTURE(m);
    CAPTURE(n);
    CAPTURE(kk);
    for (bool acc : {false, true}) {
      const auto a_nn = rnd(m * kk, seed++), b_nn = rnd(kk * n, seed++);
      const auto b_nt = rnd(n * kk, seed++), a_tn = rnd(kk * m, seed++);
      const auto c0 = rnd(m * n, seed++);
      auto c1 = c0, c2 = c0;
      k::gemm_nn(a_nn, b_nn, c1, {m, n, kk}, acc);
      k::reference::gemm_nn(a_nn, b_nn, c2, {m, n, kk}, acc);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
      c1 = c0, c2 = c0;
      k::gemm_nt(a_nn, b_nt, c1, {m, n, kk}, acc);
      k::reference::gemm_nt(a_nn, b_nt, c2, {m, n, kk}, acc);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
      c1 = c0, c2 = c0;
      k::gemm_tn(a_tn, b_nn, c1, {m, n, kk}, acc);
      k::reference::gemm_tn(a_tn, b_nn, c2, {m, n, kk}, acc);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("GEMM results do not depend on the thread count") {
  const std::size_t m = 96, n = 80, kk = 300;
  const auto a = rnd(m * kk, 5), b = rnd(kk * n, 6);
  std::vector<double> c1(m * n), c2(m * n);
  k::gemm_nn(a, b, c1, {m, n, kk}, false);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  k::gemm_nn(a, b, c2, {m, n, kk}, false);
  omp_set_num_threads(saved);
  CHECK(c1 == c2);
}

TEST_CASE("NaN inputs propagate through GEMM") {
  std::vector<double> a = {std::numeric_limits<double>::quiet_NaN(), 0.0}, b = {0.0, 1.0}, c(1);
  k::gemm_nn(a, b, c, {1, 1, 2}, false);
  CHECK(std::isnan(c[0]));
}

TEST_CASE("softmax rows sum to one and match the reference") {
  const std::size_t rows = 37, cols = 13;
  auto x = rnd(rows * cols, 9);
  for (auto& v : x) v *= 30.0;
  auto y = x;
  k::softmax_rows(x, rows, cols, 0.5);
  k::reference::softmax_rows(y, rows, cols, 0.5);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      s += x[r * cols + j];
      CHECK(x[r * cols + j] == doctest::Approx(y[r * cols + j]).epsilon(1e-13));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("exact GELU values and derivative") {
  const std::vector<double> x = {-3.0, -1.0, 0.0, 1.0, 2.5};
  std::vector<double> y(x.size()), r(x.size());
  k::gelu_forward(x, y);
  k::reference::gelu_forward(x, r);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double want = 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0)));
    CHECK(y[i] == doctest::Approx(want).epsilon(1e-15));
    CHECK(r[i] == doctest::Approx(want).epsilon(1e-15));
  }
  CHECK(y[3] == doctest::Approx(0.8413447460685429));
  const std::vector<double> ones(x.size(), 1.0);
  std::vector<double> dx(x.size());
  k::gelu_backward(x, ones, dx);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-6;
    const double fd = (0.5 * (x[i] + h) * (1 + std::erf((x[i] + h) / std::sqrt(2.0))) -
                       0.5 * (x[i] - h) * (1 + std::erf((x[i] - h) / std::sqrt(2.0)))) /
                      (2 * h);
    CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("column sums accumulate") {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6};
  std::vector<double> out = {10, 20, 30};
  k::column_sums(x, 2, 3, out);
  CHECK(out == std::vector<double>{15, 27, 39});
}
