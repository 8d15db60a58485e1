/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>

namespace sdmae {

/// SplitMix64 finalizer; decorrelates nearby seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives a stream seed from a base seed and a purpose/index pair.
constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(base ^ splitmix64(stream)) + index);
}

// Stream tags.
inline constexpr std::uint64_t kStreamMask = 1;
inline constexpr std::uint64_t kStreamOrder = 2;
inline constexpr std::uint64_t kStreamAugment = 3;
inline constexpr std::uint64_t kStreamHead = 4;
inline constexpr std::uint64_t kStreamSubsample = 5;

}  // namespace sdmae
