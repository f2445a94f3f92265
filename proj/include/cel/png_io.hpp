#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cel/tensor.hpp"

namespace cel {

// Decoded 8-bit image, rows top to bottom, channels interleaved (1 or 3).
struct PngImage {
  int64_t h = 0, w = 0;
  int channels = 0;
  std::vector<uint8_t> pix;
};

PngImage read_png(const std::string& path);

// img is [H,W], written as 8-bit grayscale.
void write_png_gray(const std::string& path, const ByteTensor& img);

// rgb is H*W*3 interleaved.
void write_png_rgb(const std::string& path, int64_t h, int64_t w,
                   const std::vector<uint8_t>& rgb);

}  // namespace cel
