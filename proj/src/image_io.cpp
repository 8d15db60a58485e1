/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>

#include "sdmae/error.hpp"

namespace sdmae {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image8 to_rgb(Image8 img) {
  if (img.channels == 3) return img;
  Image8 out{img.width, img.height, 3, std::vector<std::uint8_t>(img.width * img.height * 3)};
  for (std::size_t i = 0; i < img.width * img.height; ++i) {
    const std::uint8_t* s = img.data.data() + i * img.channels;
    std::uint8_t* d = out.data.data() + i * 3;
    if (img.channels < 3) {
      d[0] = d[1] = d[2] = s[0];
    } else {
      d[0] = s[0];
      d[1] = s[1];
      d[2] = s[2];
    }
  }
  return out;
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image8 out{image.width, image.height, 3, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image8 read_jpeg(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = static_cast<std::size_t>(cinfo.output_components);
  out.data.resize(out.width * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data.data() + std::size_t{cinfo.output_scanline} * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return to_rgb(std::move(out));
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw DataError("unrecognized image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: channels must be 1 or 3");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t c, std::size_t dst_h,
                                    std::size_t dst_w) {
  if (src_h == dst_h && src_w == dst_w) return src;
  std::vector<double> dst(dst_h * dst_w * c);
  const double sy = double(src_h) / double(dst_h), sx = double(src_w) / double(dst_w);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(src_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(src_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - double(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = src[(y0 * src_w + x0) * c + k], b = src[(y0 * src_w + x1) * c + k];
        const double d = src[(y1 * src_w + x0) * c + k], e = src[(y1 * src_w + x1) * c + k];
        dst[(y * dst_w + x) * c + k] =
            (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e);
      }
    }
  }
  return dst;
}

}  // namespace sdmae
