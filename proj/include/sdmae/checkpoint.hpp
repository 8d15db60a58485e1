/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sdmae/tensor.hpp"

namespace sdmae {

// Archive layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "SDMAECKP"
//          8   u32       format version
//         12   u64       manifest length L
//         20   L bytes   manifest, UTF-8 JSON
//       20+L   u64       FNV-1a 64 of the manifest bytes
//       28+L   ...       array payload; each array at manifest offset, raw
//                        little-endian float64 ("f64") or int64 ("i64")
//
// The manifest lists {name, dtype, shape, offset, nbytes} per array, the
// payload's FNV-1a hash, a config fingerprint and free-form metadata.

inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveArray {
  std::string name;
  Shape shape;
  bool integer = false;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;

  static ArchiveArray from_tensor(std::string name, const Tensor& t);
  static ArchiveArray from_ints(std::string name, std::vector<std::int64_t> values);
  Tensor tensor() const;
};

struct Archive {
  std::vector<ArchiveArray> arrays;
  nlohmann::json meta = nlohmann::json::object();
  std::string fingerprint;

  const ArchiveArray* find(std::string_view name) const;
  /// Throws CheckpointError(kMissingArray) when absent.
  const ArchiveArray& get(std::string_view name) const;
};

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

/// Encodes to bytes. Equal archives encode to equal bytes.
std::vector<std::uint8_t> encode_archive(const Archive& archive);
Archive decode_archive(const std::vector<std::uint8_t>& bytes);

/// Writes to `<path>.tmp` then renames over `path`.
void save_archive(const Archive& archive, const std::filesystem::path& path);
Archive load_archive(const std::filesystem::path& path);

/// Throws CheckpointError(kFingerprintMismatch) unless equal.
void verify_fingerprint(const Archive& archive, std::string_view expected);

}  // namespace sdmae
