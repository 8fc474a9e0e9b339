#pragma once

// PNG image I/O and pixel-format conversion between 8-bit interleaved RGB
// and the [-1, 1] float CHW layout the networks consume.

#include <cstdint>
#include <string>
#include <vector>

#include "udit/array.hpp"

namespace udit::img {

// 8-bit RGB image, rows top to bottom, interleaved channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // width * height * 3 bytes

  int64_t bytes() const { return int64_t(width) * height * 3; }
};

// Reads a PNG file. Gray, palette, 16-bit, and alpha variants are converted
// to 8-bit RGB. Raises IoError if the file cannot be opened, DataError if it
// is not a decodable PNG.
ImageU8 read_png(const std::string& path);

// Writes an 8-bit RGB PNG. Raises IoError on filesystem failures.
void write_png(const std::string& path, const ImageU8& image);

// u8 RGB -> float CHW in [-1, 1]:  v = px / 127.5 - 1.
Array<float> to_float(const ImageU8& image);

// float CHW -> u8 RGB: clamps to [-1, 1], then rounds (px = (v+1)*127.5).
// Round-tripping a u8 image through to_float is exact.
ImageU8 to_u8(const Array<float>& chw);

// Stacks single images (3,H,W) into a batch (N,3,H,W); all shapes must agree.
Array<float> stack(const std::vector<Array<float>>& images);

// Slices one image (3,H,W) out of a batch (N,3,H,W).
Array<float> slice(const Array<float>& batch, int index);

}  // namespace udit::img
