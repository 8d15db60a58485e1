/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sdmae/tensor.hpp"

namespace sdmae {

/// Square images, layout (B, H, W, C), values in [0, 1].
struct ImageBatch {
  Tensor pixels;

  std::size_t batch() const { return pixels.dim(0); }
  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
  std::size_t channels() const { return pixels.dim(3); }
};

/// Throws DimensionError unless rank 4, square, and B >= 1; NumericError on
/// non-finite pixels.
void validate(const ImageBatch& images);

/// Flattened patches, layout (B, N, D) with N = (H/P)^2 and D = P*P*C.
///
/// Patches are ordered row-major over the patch grid. Inside a patch, pixels
/// are row-major with the channel index fastest:
///   patch[(i * P + j) * C + c] = image[P*gr + i][P*gc + j][c].
/// Checkpoints depend on this order.
struct PatchSequence {
  Tensor patches;
  std::size_t patch_size = 0;
  std::size_t channels = 0;

  std::size_t batch() const { return patches.dim(0); }
  std::size_t num_patches() const { return patches.dim(1); }
  std::size_t patch_dim() const { return patches.dim(2); }
  std::size_t grid() const;
};

/// Per-image partition of patch indices. Both lists are ascending and every
/// image has the same number of masked patches.
struct MaskPlan {
  std::vector<std::vector<std::size_t>> visible;
  std::vector<std::vector<std::size_t>> masked;
  std::size_t num_patches = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t batch() const { return visible.size(); }
  std::size_t num_visible() const { return visible.empty() ? 0 : visible.front().size(); }
  std::size_t num_masked() const { return masked.empty() ? 0 : masked.front().size(); }

  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

/// Per-patch standardized pixels, layout (B, count, D).
struct ReconTarget {
  Tensor targets;
};

inline constexpr double kTargetNormEpsilon = 1e-6;

PatchSequence patchify(const ImageBatch& images, std::size_t patch_size);
ImageBatch unpatchify(const PatchSequence& seq);

/// floor(mu * N), with a small tolerance so 0.29 * 100 gives 29.
std::size_t masked_count(std::size_t num_patches, double mu);

/// Independent uniform masks per image, drawn from a generator seeded by `seed`.
MaskPlan random_mask(std::size_t batch, std::size_t num_patches, double mu, std::uint64_t seed);
MaskPlan random_mask(const PatchSequence& seq, double mu, std::uint64_t seed);

/// Plan with every patch visible (mu = 0), used for evaluation forwards.
MaskPlan full_plan(std::size_t batch, std::size_t num_patches);

/// Throws DimensionError when `plan` does not partition seq's patch grid.
void check_plan(const PatchSequence& seq, const MaskPlan& plan);

/// (x - mean) / sqrt(var + eps) over the D pixels of each masked patch.
ReconTarget normalize_targets(const PatchSequence& seq, const MaskPlan& plan);
/// Same normalization applied to the visible patches.
ReconTarget normalize_visible_targets(const PatchSequence& seq, const MaskPlan& plan);

/// Patches of each image selected by `index[b]`, layout (B, count, D).
Tensor gather_patches(const PatchSequence& seq,
                      const std::vector<std::vector<std::size_t>>& index);

}  // namespace sdmae
