#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "pargan/tensor.hpp"

namespace pargan {

/// RGB image as a [1, 3, H, W] float tensor with values in [-1, 1].
using Image = Tensor<float>;

inline Image make_image(int height, int width, float fill = 0.0f) { return Image({1, 3, height, width}, fill); }

inline int image_height(const Image& im) { return im.dim(im.rank() - 2); }
inline int image_width(const Image& im) { return im.dim(im.rank() - 1); }

inline std::uint8_t to_byte(float v) {
  const float u = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f;
  return static_cast<std::uint8_t>(std::lround(u));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

/// Writes an 8-bit RGB PNG. Values are clamped to [-1, 1] and quantized.
inline void write_png(const std::filesystem::path& path, const Image& im) {
  if (im.rank() != 4 || im.dim(0) != 1 || im.dim(1) != 3) {
    throw Error(ErrorCode::shape, "write_png: expected [1,3,H,W] image, got " + shape_string(im.shape()));
  }
  const int h = im.dim(2), w = im.dim(3);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "libpng initialisation failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(im[c * plane + y * w + x]);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any 8/16-bit PNG and converts it to RGB in [-1, 1].
inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!fp) throw Error(ErrorCode::io, "cannot open image '" + path.string() + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::io, "'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::io, "libpng initialisation failed");
  }
  std::vector<std::uint8_t> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::io, "corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_packing(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image im = make_image(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) im[c * plane + y * w + x] = from_byte(pixels[y * rowbytes + x * 3 + c]);
  return im;
}

/// Loads an image and checks it is square with the requested side (0 = any square).
inline Image load_training_image(const std::filesystem::path& path, int size = 0) {
  Image im = read_png(path);
  if (image_height(im) != image_width(im)) {
    throw Error(ErrorCode::validation, "image '" + path.string() + "' is not square");
  }
  if (size > 0 && image_height(im) != size) {
    throw Error(ErrorCode::validation, "image '" + path.string() + "' is " + std::to_string(image_height(im)) +
                                           " px, expected " + std::to_string(size));
  }
  return im;
}

}  // namespace pargan
