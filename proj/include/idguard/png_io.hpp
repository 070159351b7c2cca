#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "idguard/tensor.hpp"

namespace idguard {

// 8-bit RGB image buffer, row-major, interleaved.
struct Rgb8 {
  int h = 0, w = 0;
  std::vector<std::uint8_t> px;  // 3 * h * w
};

// 8- or 16-bit grayscale buffer.
struct Gray {
  int h = 0, w = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> px;  // h * w, values already widened
};

void write_png_rgb8(const std::string& path, const Rgb8& img);
Rgb8 read_png_rgb8(const std::string& path);

void write_png_gray(const std::string& path, const Gray& img);
Gray read_png_gray(const std::string& path);

// Pixel convention: 8-bit value v maps to v / 127.5 - 1 in [-1, 1].
Scalar pixel_to_unit(std::uint8_t v);
std::uint8_t unit_to_pixel(Scalar d);

// (1, 3, H, W) tensor in [-1, 1] <-> 8-bit RGB.
Rgb8 tensor_to_rgb8(const Tensor& t, int batch_index = 0);
Tensor rgb8_to_tensor(const Rgb8& img);

}  // namespace idguard
