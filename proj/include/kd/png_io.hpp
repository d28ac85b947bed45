#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kd/errors.hpp"

namespace kd {

struct ImageU8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major, 3 bytes/pixel
};

inline void write_png_rgb8(const std::string& path, const ImageU8& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw DataError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw FormatError("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline ImageU8 read_png_rgb8(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw DataError("cannot open for reading: " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8)) {
    std::fclose(fp);
    throw FormatError("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("png decode failed: " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  // normalize any color type / bit depth to 8-bit RGB
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<std::int64_t>(png_get_image_width(png, info));
  img.height = static_cast<std::int64_t>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width * img.height * 3));
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.rgb.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace kd
