#pragma once

#include <cstddef>
#include <vector>

#include "protobag/geometry.hpp"

namespace protobag {

// Dense image, [channel][row][col].
template <class T>
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<T> v;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w), v(std::size_t(c) * h * w, T(0)) {}

  T& at(int c, int y, int x) {
    return v[(std::size_t(c) * height + y) * width + x];
  }
  T at(int c, int y, int x) const {
    return v[(std::size_t(c) * height + y) * width + x];
  }
  std::size_t size() const { return v.size(); }
};

using ImageF = Image<float>;

template <class To, class From>
Image<To> image_cast(const Image<From>& a) {
  Image<To> out(a.channels, a.height, a.width);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = To(a.v[i]);
  return out;
}

// Backbone output grid with cell-contiguous feature vectors:
// [row][col][depth], so cell(r, c) is a contiguous D-vector.
template <class T>
struct FeatureMap {
  int rows = 0, cols = 0, depth = 0;
  RFGeometry geom;
  std::vector<T> v;

  FeatureMap() = default;
  FeatureMap(int r, int c, int d)
      : rows(r), cols(c), depth(d), v(std::size_t(r) * c * d, T(0)) {}

  T* cell(int r, int c) {
    return v.data() + (std::size_t(r) * cols + c) * depth;
  }
  const T* cell(int r, int c) const {
    return v.data() + (std::size_t(r) * cols + c) * depth;
  }
  int cells() const { return rows * cols; }
};

// Stack of per-prototype score grids (distances or similarities).
template <class T>
struct MapStack {
  int count = 0, rows = 0, cols = 0;
  std::vector<T> v;

  MapStack() = default;
  MapStack(int n, int r, int c)
      : count(n), rows(r), cols(c), v(std::size_t(n) * r * c, T(0)) {}

  T* map(int j) { return v.data() + std::size_t(j) * rows * cols; }
  const T* map(int j) const { return v.data() + std::size_t(j) * rows * cols; }
  int cells() const { return rows * cols; }
};

}  // namespace protobag
