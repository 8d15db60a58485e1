/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace sdmae {

/// 8-bit interleaved image.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> data;
};

/// Decodes PNG or JPEG (chosen by file signature). Gray/alpha inputs are
/// expanded/stripped to 3-channel RGB. Throws DataError on decode failure.
Image8 read_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG with 1 (gray) or 3 (RGB) channels. Throws IoError.
void write_png(const std::filesystem::path& path, const Image8& image);

/// Bilinear resize (half-pixel centers) of a float HWC image.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t channels, std::size_t dst_h,
                                    std::size_t dst_w);

}  // namespace sdmae
