/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdmae/patching.hpp"
#include "sdmae/tensor.hpp"

namespace sdmae {

/// Labeled images held in memory, pixels (n, H, W, C) in [0, 1].
struct ImageSet {
  Tensor pixels;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return pixels.dim(1); }
  std::size_t num_classes() const { return class_names.size(); }
  ImageBatch batch(std::span<const std::size_t> index) const;
  std::vector<int> labels_of(std::span<const std::size_t> index) const;
};

// ----------------------------------------------------------- folders

enum class Split { kTrain, kVal };
const char* to_string(Split s);

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  int label = 0;
  std::string hash;  // FNV-1a of the file bytes

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Dataset laid out as root/{train,val}/{class}/{image}.png|.jpg.
/// Class ids follow sorted class-directory names.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  std::size_t image_size = 0;  // 0: sizes not enforced at scan time
  std::string checksum;
  std::vector<std::string> errors;    // rejected files, one line each
  std::vector<std::string> warnings;  // e.g. empty class directories

  const std::vector<ManifestEntry>& entries(Split s) const { return s == Split::kTrain ? train : val; }
};

struct ScanOptions {
  /// When non-zero, images whose decoded size differs are rejected.
  std::size_t image_size = 0;
  /// Class directories to skip (e.g. a background class).
  std::vector<std::string> ignore_classes;
};

/// Throws DataError when no usable image is found or a file appears in both
/// splits (by content hash).
DatasetManifest scan_folder(const std::filesystem::path& root, const ScanOptions& opts = {});
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct AugmentOptions {
  bool random_crop = true;
  double min_scale = 0.2;
  double max_scale = 1.0;
  double flip_probability = 0.5;
};

/// Random resized crop (area fraction in [min_scale, max_scale], aspect in
/// [3/4, 4/3]) then horizontal flip, per image, from a generator seeded by `seed`.
ImageBatch augment(const ImageBatch& images, const AugmentOptions& opts, std::uint64_t seed);
/// Mirror every image left-right.
ImageBatch flip_horizontal(const ImageBatch& images);

struct LoadOptions {
  std::size_t image_size = 0;  // 0: keep the manifest size
  bool augment = false;
  AugmentOptions augmentation;
  std::uint64_t seed = 0;
};

struct LabeledBatch {
  ImageBatch images;
  std::vector<int> labels;
};

/// Decodes, resizes to the requested size, scales to [0, 1], optionally augments.
LabeledBatch load_batch(const DatasetManifest& manifest, Split split,
                        std::span<const std::size_t> index, const LoadOptions& opts);
/// Every image of a split, without augmentation.
ImageSet load_split(const DatasetManifest& manifest, Split split, std::size_t image_size);

// --------------------------------------------------------- synthetic

/// Histology-flavoured textures: a class-specific oriented grating (stroma)
/// with class-specific nucleus-blob density, in an H&E-like palette.
struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t images_per_class = 100;
  std::size_t image_size = 32;
  double base_frequency = 2.5;       // grating cycles per image
  double frequency_step = 1.5;       // added for odd classes
  double orientation_jitter = 0.15;  // radians, uniform +-
  double phase_jitter = 0.25;        // 1: phase uniform over a full cycle
  double blob_density = 2.0;         // mean blobs per image for class 0
  double blob_density_step = 3.0;    // added per class index
  double noise = 0.1;                // 0: clean, 1: pure uniform noise
  std::uint64_t seed = 1;
  double train_fraction = 0.8;
};

struct SyntheticDataset {
  ImageSet train;
  ImageSet val;
};

/// Deterministic in (spec): pixels are quantized to 8 bits so the in-memory
/// result matches what generate_synthetic writes.
SyntheticDataset synthesize(const SyntheticSpec& spec);
/// Writes the dataset as PNG folders under `out` and returns its manifest.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// FNV-1a over pixels and labels.
std::string dataset_checksum(const ImageSet& set);

/// Up to `per_class` items of each class, chosen with `seed`, in ascending order.
std::vector<std::size_t> balanced_subsample(std::span<const int> labels, std::size_t per_class,
                                            std::uint64_t seed);

}  // namespace sdmae
