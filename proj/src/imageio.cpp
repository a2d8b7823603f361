#include "protobag/imageio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "protobag/errors.hpp"

namespace protobag {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp, png_const_charp msg) {
  throw DataError(std::string("png: ") + (msg ? msg : "unknown error"));
}

void png_quiet(png_structp, png_const_charp) {}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail,
                                 png_quiet);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw DataError("png: allocation failed");
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail,
                                  png_quiet);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw DataError("png: allocation failed");
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

// Decodes to 8-bit with `channels` components per pixel (1 = gray, 3 = RGB).
std::vector<std::uint8_t> decode_png(const std::string& path, int channels,
                                     int& height, int& width) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path);
  PngReader r;
  png_init_io(r.png, f.get());
  png_read_info(r.png, r.info);
  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);
  const int color = png_get_color_type(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  if (depth == 16) png_set_strip_16(r.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  png_set_strip_alpha(r.png);
  if (channels == 1) {
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
  } else {
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(r.png);
  }
  png_read_update_info(r.png, r.info);
  height = int(h);
  width = int(w);
  std::vector<std::uint8_t> out(std::size_t(h) * w * channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = out.data() + std::size_t(y) * w * channels;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return out;
}

void encode_png(const std::string& path, const std::uint8_t* pixels, int height,
                int width, int channels) {
  if (height < 1 || width < 1) throw InputError("png write: empty image");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open " + path + " for writing");
  PngWriter w;
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, png_uint_32(width), png_uint_32(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows((std::size_t)height);
  for (int y = 0; y < height; ++y)
    rows[std::size_t(y)] =
        const_cast<std::uint8_t*>(pixels) + std::size_t(y) * width * channels;
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

}  // namespace

ImageF read_png_gray(const std::string& path) {
  int h = 0, w = 0;
  const std::vector<std::uint8_t> bytes = decode_png(path, 1, h, w);
  ImageF img(1, h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.v[i] = float(bytes[i]) / 255.0f;
  return img;
}

void write_png_gray(const std::string& path, const ImageF& img) {
  if (img.channels != 1) throw InputError("png write: expected one channel");
  std::vector<std::uint8_t> bytes(img.v.size());
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    const float x = std::clamp(img.v[i], 0.0f, 1.0f);
    bytes[i] = std::uint8_t(std::lround(x * 255.0f));
  }
  encode_png(path, bytes.data(), img.height, img.width, 1);
}

void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                     int height, int width) {
  if (pixels.size() != std::size_t(height) * width)
    throw InputError("png write: pixel count mismatch");
  encode_png(path, pixels.data(), height, width, 1);
}

void write_png_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb,
                   int height, int width) {
  if (rgb.size() != std::size_t(height) * width * 3)
    throw InputError("png write: pixel count mismatch");
  encode_png(path, rgb.data(), height, width, 3);
}

std::vector<std::uint8_t> read_png_rgb(const std::string& path, int& height,
                                       int& width) {
  return decode_png(path, 3, height, width);
}

ImageF resize_bilinear(const ImageF& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw InputError("resize: empty target");
  if (out_height == img.height && out_width == img.width) return img;
  ImageF out(img.channels, out_height, out_width);
  const double sy = double(img.height) / out_height;
  const double sx = double(img.width) / out_width;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out_height; ++y) {
      const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
      const int y0 = std::min(int(fy), img.height - 1);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_width; ++x) {
        const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
        const int x0 = std::min(int(fx), img.width - 1);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - x0;
        const double v00 = img.at(c, y0, x0), v01 = img.at(c, y0, x1);
        const double v10 = img.at(c, y1, x0), v11 = img.at(c, y1, x1);
        out.at(c, y, x) = float((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

Image<std::uint8_t> resize_nearest(const Image<std::uint8_t>& img, int out_height,
                                   int out_width) {
  if (out_height < 1 || out_width < 1) throw InputError("resize: empty target");
  Image<std::uint8_t> out(img.channels, out_height, out_width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out_height; ++y) {
      const int sy = std::min(int((y + 0.5) * img.height / out_height),
                              img.height - 1);
      for (int x = 0; x < out_width; ++x) {
        const int sx = std::min(int((x + 0.5) * img.width / out_width),
                                img.width - 1);
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  return out;
}

}  // namespace protobag
