#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protobag/types.hpp"

namespace protobag {

// Grayscale PNG (any bit depth/color type, converted) as floats in [0,1].
ImageF read_png_gray(const std::string& path);

// Clamps to [0,1] and writes 8-bit grayscale. Single-channel images only.
void write_png_gray(const std::string& path, const ImageF& img);

void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                     int height, int width);

// Interleaved RGB, row-major, 3 bytes per pixel.
void write_png_rgb(const std::string& path, const std::vector<std::uint8_t>& rgb,
                   int height, int width);

std::vector<std::uint8_t> read_png_rgb(const std::string& path, int& height,
                                       int& width);

// Half-pixel-centered bilinear resampling, channel by channel.
ImageF resize_bilinear(const ImageF& img, int out_height, int out_width);

// Nearest-neighbor, for label masks.
Image<std::uint8_t> resize_nearest(const Image<std::uint8_t>& img, int out_height,
                                   int out_width);

}  // namespace protobag
