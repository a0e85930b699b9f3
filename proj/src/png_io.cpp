// Copyright 2026 The gadft Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gadft/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "gadft/error.hpp"

namespace gadft {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IngestionError("cannot open " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw IngestionError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IngestionError("libpng initialization failed for " + path.string());
  }
  Image8 out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestionError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.pixels.resize(static_cast<std::size_t>(out.width * out.height * out.channels));
  rows.resize(static_cast<std::size_t>(out.height));
  for (Index y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.pixels.data() + y * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3) throw IngestionError("unsupported channel layout in " + path.string());
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw ParameterError("PNG export supports 1 or 3 channels");
  if (static_cast<Index>(image.pixels.size()) != image.height * image.width * image.channels) {
    throw ShapeError("pixel buffer does not match the image size");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IngestionError("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IngestionError("libpng initialization failed for " + path.string());
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IngestionError("failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image8 to_image8(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("to_image8 expects [C,H,W]");
  Image8 out{chw.dim(1), chw.dim(2), chw.dim(0), {}};
  const Index plane = out.height * out.width;
  out.pixels.resize(static_cast<std::size_t>(plane * out.channels));
  for (Index c = 0; c < out.channels; ++c)
    for (Index i = 0; i < plane; ++i) {
      const double v = std::clamp(static_cast<double>(chw.data()[c * plane + i]), 0.0, 1.0);
      out.pixels[static_cast<std::size_t>(i * out.channels + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

Tensor from_image8(const Image8& image, Index channels) {
  Tensor out({channels, image.height, image.width});
  const Index plane = image.height * image.width;
  auto data = out.mutable_data();
  for (Index c = 0; c < channels; ++c) {
    const Index src = image.channels == 1 ? 0 : std::min(c, image.channels - 1);
    for (Index i = 0; i < plane; ++i) {
      data[c * plane + i] = static_cast<float>(image.pixels[static_cast<std::size_t>(i * image.channels + src)]) / 255.0f;
    }
  }
  return out;
}

}  // namespace gadft
