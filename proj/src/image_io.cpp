// SPDX-License-Identifier: Apache-2.0
#include "dskd/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "dskd/error.hpp"

namespace dskd {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("'" + path + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialisation failed");
  }
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  img.w = static_cast<int>(png_get_image_width(png, info));
  img.h = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.data.resize(static_cast<std::size_t>(img.w) * img.h * img.channels);
  rows.resize(img.h);
  for (int y = 0; y < img.h; ++y) {
    rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.w * img.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels == 2) {  // gray + alpha -> gray
    Image8 gray(img.h, img.w, 1);
    for (std::size_t i = 0; i < gray.data.size(); ++i) gray.data[i] = img.data[2 * i];
    return gray;
  }
  return img;
}

void write_png(const std::string& path, const Image8& image) {
  const int color = [&] {
    switch (image.channels) {
      case 1: return PNG_COLOR_TYPE_GRAY;
      case 3: return PNG_COLOR_TYPE_RGB;
      case 4: return PNG_COLOR_TYPE_RGBA;
      default: throw InputError("write_png: unsupported channel count");
    }
  }();
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write image '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h), 8,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.h; ++y) {
    rows[y] = const_cast<png_bytep>(image.data.data() +
                                    static_cast<std::size_t>(y) * image.w * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw IoError("failed flushing '" + path + "'");
}

Tensor to_tensor(const Image8& image) {
  Tensor t(image.h, image.w, 3);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = image.channels >= 3 ? c : 0;
        t(y, x, c) = image.at(y, x, src) / 255.0;
      }
    }
  }
  return t;
}

Image8 to_image8(const Tensor& rgb) {
  Image8 img(rgb.h(), rgb.w(), rgb.c());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(rgb.values()[i], 0.0, 1.0);
    img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor resize_image(const Tensor& rgb, int h, int w) {
  if (rgb.h() == h && rgb.w() == w) return rgb;
  Tensor out(h, w, rgb.c());
  const double sy = static_cast<double>(rgb.h()) / h;
  const double sx = static_cast<double>(rgb.w()) / w;
  for (int y = 0; y < h; ++y) {
    const double fy = std::max((y + 0.5) * sy - 0.5, 0.0);
    const int y0 = std::min(static_cast<int>(fy), rgb.h() - 1);
    const int y1 = std::min(y0 + 1, rgb.h() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::max((x + 0.5) * sx - 0.5, 0.0);
      const int x0 = std::min(static_cast<int>(fx), rgb.w() - 1);
      const int x1 = std::min(x0 + 1, rgb.w() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < rgb.c(); ++c) {
        const double top = (1 - wx) * rgb(y0, x0, c) + wx * rgb(y0, x1, c);
        const double bot = (1 - wx) * rgb(y1, x0, c) + wx * rgb(y1, x1, c);
        out(y, x, c) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

}  // namespace dskd
