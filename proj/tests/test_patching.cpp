/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "sdmae/error.hpp"
#include "sdmae/patching.hpp"
#include "support.hpp"

using namespace sdmae;

TEST_CASE("patchify layout follows the documented index formula") {
  const std::size_t b = 2, s = 8, p = 4, c = 3, g = s / p;
  const ImageBatch img = test::random_images(b, s, 3);
  const PatchSequence seq = patchify(img, p);
  REQUIRE(seq.patches.shape() == Shape{b, g * g, p * p * c});
  CHECK(seq.grid() == g);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t gr = 0; gr < g; ++gr)
      for (std::size_t gc = 0; gc < g; ++gc)
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t j = 0; j < p; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double want = img.pixels[((bi * s + p * gr + i) * s + p * gc + j) * c + ch];
              const double got = seq.patches[(bi * g * g + gr * g + gc) * p * p * c + (i * p + j) * c + ch];
              CHECK(got == want);
            }
}

TEST_CASE("unpatchify inverts patchify exactly") {
  for (std::size_t p : {1, 2, 4, 8}) {
    const ImageBatch img = test::random_images(3, 16, p);
    CHECK(unpatchify(patchify(img, p)).pixels == img.pixels);
  }
}

TEST_CASE("patchify rejects bad geometry") {
  CHECK_THROWS_AS(patchify(test::random_images(1, 10, 1), 4), DimensionError);
  CHECK_THROWS_AS(patchify(ImageBatch{Tensor({1, 8, 6, 3})}, 2), DimensionError);
  CHECK_THROWS_AS(patchify(ImageBatch{Tensor({8, 8, 3})}, 2), DimensionError);
}

TEST_CASE("masked count is floor(mu * N)") {
  CHECK(masked_count(196, 0.6) == 117);
  CHECK(masked_count(196, 0.75) == 147);
  CHECK(masked_count(4, 0.5) == 2);
  CHECK(masked_count(100, 0.29) == 29);
  CHECK(masked_count(16, 0.0) == 0);
  CHECK_THROWS_AS(masked_count(16, 1.0), ParameterError);
  CHECK_THROWS_AS(masked_count(16, -0.1), ParameterError);
}

TEST_CASE("mask plans partition the grid with sorted lists and are seed-deterministic") {
  const MaskPlan a = random_mask(5, 196, 0.6, 42);
  const MaskPlan b = random_mask(5, 196, 0.6, 42);
  const MaskPlan c = random_mask(5, 196, 0.6, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (std::size_t i = 0; i < a.batch(); ++i) {
    CHECK(a.masked[i].size() == 117);
    CHECK(a.visible[i].size() == 79);
    CHECK(std::is_sorted(a.masked[i].begin(), a.masked[i].end()));
    CHECK(std::is_sorted(a.visible[i].begin(), a.visible[i].end()));
    std::set<std::size_t> all(a.masked[i].begin(), a.masked[i].end());
    all.insert(a.visible[i].begin(), a.visible[i].end());
    CHECK(all.size() == 196);
    CHECK(*all.rbegin() == 195);
  }
  CHECK(a.masked[0] != a.masked[1]);
}

TEST_CASE("full plan keeps every patch visible") {
  const MaskPlan p = full_plan(2, 9);
  CHECK(p.num_masked() == 0);
  CHECK(p.num_visible() == 9);
}

TEST_CASE("normalized targets match a per-patch loop oracle") {
  const PatchSequence seq = patchify(test::random_images(2, 8, 4), 4);
  const MaskPlan plan = random_mask(seq, 0.5, 1);
  const Tensor t = normalize_targets(seq, plan).targets;
  const Tensor tv = normalize_visible_targets(seq, plan).targets;
  const std::size_t d = seq.patch_dim();
  REQUIRE(t.shape() == Shape{2, 2, d});
  for (std::size_t b = 0; b < 2; ++b)
    for (int which = 0; which < 2; ++which) {
      const auto& idx = which ? plan.visible[b] : plan.masked[b];
      const Tensor& out = which ? tv : t;
      for (std::size_t m = 0; m < idx.size(); ++m) {
        const double* x = seq.patches.data() + (b * seq.num_patches() + idx[m]) * d;
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= double(d);
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= double(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double want = (x[j] - mean) / std::sqrt(var + 1e-6);
          CHECK(out[(b * idx.size() + m) * d + j] == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
}

TEST_CASE("a constant patch normalizes to zeros") {
  ImageBatch img{Tensor({1, 4, 4, 3}, 0.7)};
  const PatchSequence seq = patchify(img, 4);
  const MaskPlan plan = random_mask(seq, 0.5, 0);
  CHECK(plan.num_masked() == 0);
  const Tensor t = normalize_visible_targets(seq, plan).targets;
  for (double v : t.values()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("check_plan rejects mismatched plans") {
  const PatchSequence seq = patchify(test::random_images(2, 8, 4), 4);
  CHECK_THROWS_AS(check_plan(seq, random_mask(3, 4, 0.5, 0)), DimensionError);
  CHECK_THROWS_AS(check_plan(seq, random_mask(2, 9, 0.5, 0)), DimensionError);
  MaskPlan bad = random_mask(2, 4, 0.5, 0);
  bad.visible[0][0] = bad.masked[0][0];
  CHECK_THROWS_AS(check_plan(seq, bad), DimensionError);
}
