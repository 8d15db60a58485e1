/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "sdmae/error.hpp"

namespace sdmae {
namespace {

std::size_t isqrt_exact(std::size_t n) {
  auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n ? r : 0;
}

ReconTarget normalize_selected(const PatchSequence& seq,
                               const std::vector<std::vector<std::size_t>>& index) {
  Tensor rows = gather_patches(seq, index);
  const std::size_t d = seq.patch_dim();
  const std::size_t count = rows.size() / (d == 0 ? 1 : d);
  for (std::size_t r = 0; r < count; ++r) {
    double* x = rows.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kTargetNormEpsilon);
    for (std::size_t i = 0; i < d; ++i) x[i] = (x[i] - mean) * inv;
  }
  return {std::move(rows)};
}

}  // namespace

void validate(const ImageBatch& images) {
  const Tensor& t = images.pixels;
  if (t.rank() != 4) {
    throw DimensionError("image batch must have rank 4 (B, H, W, C), got " +
                         shape_string(t.shape()));
  }
  if (t.dim(0) == 0) throw DimensionError("image batch is empty");
  if (t.dim(1) != t.dim(2)) {
    throw DimensionError("images must be square: H=" + std::to_string(t.dim(1)) +
                         " W=" + std::to_string(t.dim(2)));
  }
  if (!t.all_finite()) throw NumericError("image batch contains non-finite values");
}

std::size_t PatchSequence::grid() const { return isqrt_exact(num_patches()); }

PatchSequence patchify(const ImageBatch& images, std::size_t patch_size) {
  validate(images);
  const std::size_t b = images.batch(), h = images.height(), w = images.width(),
                    c = images.channels(), p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify: H=" + std::to_string(h) + " W=" + std::to_string(w) +
                         " not divisible by P=" + std::to_string(p));
  }
  const std::size_t g = h / p, n = g * g, d = p * p * c;
  PatchSequence seq{Tensor({b, n, d}), p, c};
  const double* src = images.pixels.data();
  double* dst = seq.patches.data();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t gr = 0; gr < g; ++gr)
      for (std::size_t gc = 0; gc < g; ++gc) {
        double* patch = dst + (bi * n + gr * g + gc) * d;
        for (std::size_t i = 0; i < p; ++i) {
          const double* line = src + ((bi * h + gr * p + i) * w + gc * p) * c;
          std::copy_n(line, p * c, patch + i * p * c);
        }
      }
  return seq;
}

ImageBatch unpatchify(const PatchSequence& seq) {
  if (seq.patches.rank() != 3) {
    throw DimensionError("unpatchify: expected (B, N, D), got " +
                         shape_string(seq.patches.shape()));
  }
  const std::size_t b = seq.batch(), n = seq.num_patches(), d = seq.patch_dim(),
                    p = seq.patch_size, c = seq.channels;
  const std::size_t g = isqrt_exact(n);
  if (p == 0 || c == 0 || d != p * p * c || g == 0) {
    throw DimensionError("unpatchify: inconsistent N=" + std::to_string(n) +
                         " D=" + std::to_string(d) + " for P=" + std::to_string(p) +
                         " C=" + std::to_string(c));
  }
  const std::size_t h = g * p;
  ImageBatch out{Tensor({b, h, h, c})};
  const double* src = seq.patches.data();
  double* dst = out.pixels.data();
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t gr = 0; gr < g; ++gr)
      for (std::size_t gc = 0; gc < g; ++gc) {
        const double* patch = src + (bi * n + gr * g + gc) * d;
        for (std::size_t i = 0; i < p; ++i) {
          double* line = dst + ((bi * h + gr * p + i) * h + gc * p) * c;
          std::copy_n(patch + i * p * c, p * c, line);
        }
      }
  return out;
}

std::size_t masked_count(std::size_t num_patches, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) {
    throw ParameterError("masking ratio must lie in [0, 1), got " + std::to_string(mu));
  }
  return static_cast<std::size_t>(std::floor(mu * static_cast<double>(num_patches) + 1e-9));
}

MaskPlan random_mask(std::size_t batch, std::size_t num_patches, double mu, std::uint64_t seed) {
  const std::size_t m = masked_count(num_patches, mu);
  MaskPlan plan;
  plan.num_patches = num_patches;
  plan.ratio = mu;
  plan.seed = seed;
  plan.visible.resize(batch);
  plan.masked.resize(batch);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(num_patches);
  for (std::size_t b = 0; b < batch; ++b) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    // Partial Fisher-Yates: the first m entries become a uniform m-subset.
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, num_patches - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    plan.masked[b].assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
    plan.visible[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(m), perm.end());
    std::sort(plan.masked[b].begin(), plan.masked[b].end());
    std::sort(plan.visible[b].begin(), plan.visible[b].end());
  }
  return plan;
}

MaskPlan random_mask(const PatchSequence& seq, double mu, std::uint64_t seed) {
  return random_mask(seq.batch(), seq.num_patches(), mu, seed);
}

MaskPlan full_plan(std::size_t batch, std::size_t num_patches) {
  MaskPlan plan;
  plan.num_patches = num_patches;
  plan.visible.assign(batch, std::vector<std::size_t>(num_patches));
  plan.masked.assign(batch, {});
  for (auto& v : plan.visible) std::iota(v.begin(), v.end(), std::size_t{0});
  return plan;
}

void check_plan(const PatchSequence& seq, const MaskPlan& plan) {
  if (plan.batch() != seq.batch() || plan.masked.size() != seq.batch() ||
      plan.num_patches != seq.num_patches()) {
    throw DimensionError("mask plan (batch " + std::to_string(plan.batch()) + ", N " +
                         std::to_string(plan.num_patches) + ") does not match sequence (batch " +
                         std::to_string(seq.batch()) + ", N " +
                         std::to_string(seq.num_patches()) + ")");
  }
  const std::size_t v = plan.num_visible(), m = plan.num_masked();
  if (v + m != seq.num_patches()) throw DimensionError("mask plan does not cover every patch");
  std::vector<char> seen(seq.num_patches());
  for (std::size_t b = 0; b < plan.batch(); ++b) {
    if (plan.visible[b].size() != v || plan.masked[b].size() != m) {
      throw DimensionError("mask plan counts differ across the batch");
    }
    std::fill(seen.begin(), seen.end(), 0);
    for (const auto* list : {&plan.visible[b], &plan.masked[b]}) {
      for (std::size_t idx : *list) {
        if (idx >= seen.size() || seen[idx]) {
          throw DimensionError("mask plan is not a partition of the patch indices");
        }
        seen[idx] = 1;
      }
    }
  }
}

Tensor gather_patches(const PatchSequence& seq,
                      const std::vector<std::vector<std::size_t>>& index) {
  const std::size_t b = seq.batch(), n = seq.num_patches(), d = seq.patch_dim();
  const std::size_t count = index.empty() ? 0 : index.front().size();
  Tensor out({b, count, d});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t j = 0; j < count; ++j)
      std::copy_n(seq.patches.data() + (bi * n + index[bi][j]) * d, d,
                  out.data() + (bi * count + j) * d);
  return out;
}

ReconTarget normalize_targets(const PatchSequence& seq, const MaskPlan& plan) {
  check_plan(seq, plan);
  return normalize_selected(seq, plan.masked);
}

ReconTarget normalize_visible_targets(const PatchSequence& seq, const MaskPlan& plan) {
  check_plan(seq, plan);
  return normalize_selected(seq, plan.visible);
}

}  // namespace sdmae
