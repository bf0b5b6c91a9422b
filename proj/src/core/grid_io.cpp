#include "reason/core/grid_io.hpp"
#include "reason/core/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace reason::io {

namespace {

struct FileCloser {
  void operator()(std::FILE *f) const {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;
};

RawPng read_raw(const std::filesystem::path &path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp)
    throw ValidationError("cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("malformed PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA)
    png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16)
    png_set_swap(png); // little-endian host order
  png_read_update_info(png, info);

  RawPng out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buf(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r)
    rows[r] = buf.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  out.samples.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      std::uint16_t v;
      if (out.bit_depth == 16)
        v = static_cast<std::uint16_t>(rows[r][2 * c] | (rows[r][2 * c + 1] << 8));
      else
        v = rows[r][c];
      out.samples[static_cast<std::size_t>(r) * out.width + c] = v;
    }
  return out;
}

void write_raw(const std::filesystem::path &path, int width, int height, int bit_depth,
               const std::vector<std::uint16_t> &samples) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp)
    throw ValidationError("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bpp = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(width) * bpp);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::uint16_t v = samples[static_cast<std::size_t>(r) * width + c];
      if (bpp == 2) {
        row[2 * c] = static_cast<png_byte>(v >> 8); // PNG is big-endian
        row[2 * c + 1] = static_cast<png_byte>(v & 0xff);
      } else {
        row[c] = static_cast<png_byte>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint16_t to_level(double v, double scale) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * scale));
}

} // namespace

GridF read_png_gray(const std::filesystem::path &path) {
  const RawPng raw = read_raw(path);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  GridF g(raw.height, raw.width);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = raw.samples[i] / scale;
  return g;
}

GridU8 read_mask_png(const std::filesystem::path &path) {
  const RawPng raw = read_raw(path);
  if (raw.bit_depth != 8)
    throw ValidationError("mask " + path.string() + " must be 8-bit");
  GridU8 g(raw.height, raw.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto v = raw.samples[i];
    if (v != 0 && v != 255)
      throw ValidationError("mask " + path.string() + " has value " + std::to_string(v) + " outside {0,255}");
    g[i] = v == 255 ? 1 : 0;
  }
  return g;
}

void write_png_gray8(const std::filesystem::path &path, const GridF &g) {
  std::vector<std::uint16_t> s(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    s[i] = to_level(g[i], 255.0);
  write_raw(path, g.cols(), g.rows(), 8, s);
}

void write_png_gray16(const std::filesystem::path &path, const GridF &g) {
  std::vector<std::uint16_t> s(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    s[i] = to_level(g[i], 65535.0);
  write_raw(path, g.cols(), g.rows(), 16, s);
}

void write_mask_png(const std::filesystem::path &path, const GridU8 &mask) {
  std::vector<std::uint16_t> s(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    s[i] = mask[i] ? 255 : 0;
  write_raw(path, mask.cols(), mask.rows(), 8, s);
}

GridF quantize_u8(const GridF &g) {
  GridF out(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = to_level(g[i], 255.0) / 255.0;
  return out;
}

} // namespace reason::io
