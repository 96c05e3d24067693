#pragma once

// 8-bit PNG read/write for dataset samples and prediction maps.

#include <cstdint>
#include <string>
#include <vector>

#include "cebsnet/tensor.hpp"

namespace cebsnet {

struct ImageU8 {
  i64 width = 0;
  i64 height = 0;
  i64 channels = 0;  // 1 (gray) or 3 (rgb), interleaved rows
  std::vector<std::uint8_t> pixels;

  i64 size() const { return width * height * channels; }
  std::uint8_t at(i64 y, i64 x, i64 c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(i64 y, i64 x, i64 c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

ImageU8 read_png(const std::string& path, i64 channels);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace cebsnet
