// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dskd/tensor.hpp"

namespace dskd {

/// 8-bit interleaved image (1 = gray, 3 = RGB, 4 = RGBA).
struct Image8 {
  int h = 0;
  int w = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int h_, int w_, int c_)
      : h(h_), w(w_), channels(c_), data(static_cast<std::size_t>(h_) * w_ * c_, 0) {}
  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * w + x) * channels + c];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Throws DataError on unreadable / malformed files. 16-bit PNGs are
/// reduced to 8 bits; palette images are expanded.
Image8 read_png(const std::string& path);
/// Deterministic encoder: same image, same bytes. Throws IoError.
void write_png(const std::string& path, const Image8& image);

/// RGB tensor in [0, 1]; gray inputs are replicated, alpha is dropped.
Tensor to_tensor(const Image8& image);
/// Rounds each channel of a [0, 1] tensor to 8 bits.
Image8 to_image8(const Tensor& rgb);

/// Bilinear (half-pixel centre) resize of an RGB tensor.
Tensor resize_image(const Tensor& rgb, int h, int w);

}  // namespace dskd
