#include "cel/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace cel {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<FILE, FileCloser>;

}  // namespace

PngImage read_png(const std::string& path) {
  File fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(cat("cannot open ", path));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(cat("failed to decode ", path));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // normalize everything to 8-bit gray or rgb
  png_set_strip_16(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  PngImage img;
  img.h = png_get_image_height(png, info);
  img.w = png_get_image_width(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(cat(path, ": unsupported channel count ", img.channels));
  }
  img.pix.resize(static_cast<size_t>(img.h * img.w * img.channels));
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int64_t y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] = img.pix.data() + y * img.w * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace {

void write_png(const std::string& path, int64_t h, int64_t w, int color_type, int channels,
               const uint8_t* pix) {
  File fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(cat("cannot write ", path));
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(cat("failed to encode ", path));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y)
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pix + y * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray(const std::string& path, const ByteTensor& img) {
  check(img.rank() == 2, cat("write_png_gray: want [H,W], got ", shape_str(img.shape)));
  write_png(path, img.shape[0], img.shape[1], PNG_COLOR_TYPE_GRAY, 1, img.data());
}

void write_png_rgb(const std::string& path, int64_t h, int64_t w,
                   const std::vector<uint8_t>& rgb) {
  check(static_cast<int64_t>(rgb.size()) == h * w * 3, "write_png_rgb: buffer size mismatch");
  write_png(path, h, w, PNG_COLOR_TYPE_RGB, 3, rgb.data());
}

}  // namespace cel
