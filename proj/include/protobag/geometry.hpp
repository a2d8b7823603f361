#pragma once

#include <algorithm>
#include <string>

#include "protobag/errors.hpp"

namespace protobag {

// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct Box {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
  long long area() const { return (long long)height() * width(); }
  bool empty() const { return row1 <= row0 || col1 <= col0; }

  bool contains(int r, int c) const {
    return r >= row0 && r < row1 && c >= col0 && c < col1;
  }
  bool intersects(const Box& o) const {
    return row0 < o.row1 && o.row0 < row1 && col0 < o.col1 && o.col0 < col1;
  }
  friend bool operator==(const Box& a, const Box& b) {
    return a.row0 == b.row0 && a.col0 == b.col0 && a.row1 == b.row1 &&
           a.col1 == b.col1;
  }
};

// Receptive-field geometry of a stacked valid/padded convolution pipeline.
// Every feature cell maps to an input patch of side `receptive_field`;
// horizontally adjacent cells are offset by `total_stride` pixels.
struct RFGeometry {
  int receptive_field = 1;
  int total_stride = 1;
  int total_padding = 0;
  int feature_rows = 0;
  int feature_cols = 0;
  int input_height = 0;
  int input_width = 0;
};

// Input patch seen by feature cell (cell_row, cell_col), clipped to the image.
// Unclipped side is exactly the receptive field.
inline Box feature_to_input_box(const RFGeometry& g, int cell_row,
                                int cell_col) {
  if (cell_row < 0 || cell_row >= g.feature_rows || cell_col < 0 ||
      cell_col >= g.feature_cols) {
    throw IndexError("feature cell (" + std::to_string(cell_row) + "," +
                     std::to_string(cell_col) + ") outside " +
                     std::to_string(g.feature_rows) + "x" +
                     std::to_string(g.feature_cols) + " feature map");
  }
  const int r0 = cell_row * g.total_stride - g.total_padding;
  const int c0 = cell_col * g.total_stride - g.total_padding;
  Box b;
  b.row0 = std::max(0, r0);
  b.col0 = std::max(0, c0);
  b.row1 = std::min(g.input_height, r0 + g.receptive_field);
  b.col1 = std::min(g.input_width, c0 + g.receptive_field);
  return b;
}

}  // namespace protobag
