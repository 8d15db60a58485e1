/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "sdmae/backbone.hpp"
#include "sdmae/objectives.hpp"
#include "sdmae/patching.hpp"
#include "sdmae/tensor.hpp"

namespace sdmae::test {

/// 8x8 images, P=4, encoder depth 2 width 16, decoder depth 1 width 8, K=7.
inline ModelConfig tiny_model(std::uint64_t seed = 7) {
  ModelConfig m;
  m.image_size = 8;
  m.patch_size = 4;
  m.channels = 3;
  m.encoder_depth = 2;
  m.encoder_width = 16;
  m.encoder_heads = 2;
  m.decoder_depth = 1;
  m.decoder_width = 8;
  m.decoder_heads = 2;
  m.mlp_ratio = 4;
  m.head.hidden_dim = 12;
  m.head.bottleneck_dim = 5;
  m.head.output_dim = 7;
  m.init_seed = seed;
  return m;
}

/// 16x16 images, P=4: small enough for many optimizer steps in a test.
inline ModelConfig small_model(std::uint64_t seed = 3) {
  ModelConfig m;
  m.image_size = 16;
  m.patch_size = 4;
  m.channels = 3;
  m.encoder_depth = 2;
  m.encoder_width = 32;
  m.encoder_heads = 2;
  m.decoder_depth = 1;
  m.decoder_width = 16;
  m.decoder_heads = 2;
  m.head.hidden_dim = 32;
  m.head.bottleneck_dim = 16;
  m.head.output_dim = 32;
  m.init_seed = seed;
  return m;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline ImageBatch random_images(std::size_t b, std::size_t size, std::uint64_t seed, std::size_t c = 3) {
  return ImageBatch{random_tensor({b, size, size, c}, seed, 0.0, 1.0)};
}

/// Row-stochastic (rows, k) with strictly positive entries.
inline Tensor random_stochastic(std::size_t rows, std::size_t k, std::uint64_t seed) {
  Tensor t = random_tensor({rows, k}, seed, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += t.at(r, j);
    for (std::size_t j = 0; j < k; ++j) t.at(r, j) /= s;
  }
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sdmae_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace sdmae::test
