#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "protobag/backbone.hpp"
#include "protobag/config.hpp"
#include "protobag/errors.hpp"
#include "protobag/geometry.hpp"
#include "protobag/rng.hpp"

using namespace protobag;

TEST_CASE("box accessors") {
  const Box b{2, 3, 5, 9};
  CHECK(b.height() == 3);
  CHECK(b.width() == 6);
  CHECK(b.area() == 18);
  CHECK(b.contains(2, 3));
  CHECK(b.contains(4, 8));
  CHECK(!b.contains(5, 3));
  CHECK(!b.contains(2, 9));
  CHECK(b.intersects(Box{4, 8, 10, 12}));
  CHECK(!b.intersects(Box{5, 9, 7, 12}));
}

namespace {

RFGeometry stacked_geometry(const std::vector<LayerSpec>& layers, int side) {
  BackboneConfig cfg;
  cfg.in_channels = 1;
  cfg.input_height = cfg.input_width = side;
  cfg.layers = layers;
  return compute_geometry(cfg);
}

}  // namespace

TEST_CASE("receptive field recurrence on known stacks") {
  // single 3x3: r=3, s=1
  RFGeometry g = stacked_geometry({{3, 1, 4, 0, true, false}}, 16);
  CHECK(g.receptive_field == 3);
  CHECK(g.total_stride == 1);
  CHECK(g.feature_rows == 14);

  // the desk preset: r=11, s=4
  g = compute_geometry(desk_backbone(1, 128));
  CHECK(g.receptive_field == 11);
  CHECK(g.total_stride == 4);
  CHECK(g.total_padding == 0);
  CHECK(g.feature_rows == 30);
  CHECK(g.feature_cols == 30);

  // the wider preset: r=33, s=8
  g = compute_geometry(bagnet33_backbone(1, 128));
  CHECK(g.receptive_field == 33);
  CHECK(g.total_stride == 8);
}

TEST_CASE("feature_to_input_box matches the closed form") {
  RFGeometry g;
  g.receptive_field = 33;
  g.total_stride = 8;
  g.total_padding = 0;
  g.feature_rows = 10;
  g.feature_cols = 10;
  g.input_height = g.input_width = 105;
  const Box b = feature_to_input_box(g, 2, 3);
  CHECK(b.row0 == 16);
  CHECK(b.row1 == 49);
  CHECK(b.col0 == 24);
  CHECK(b.col1 == 57);
  const Box o = feature_to_input_box(g, 0, 0);
  CHECK(o.row0 == 0);
  CHECK(o.row1 == 33);
  CHECK(o.col0 == 0);
  CHECK(o.col1 == 33);
}

TEST_CASE("boxes are clipped to the image") {
  RFGeometry g;
  g.receptive_field = 5;
  g.total_stride = 2;
  g.total_padding = 2;
  g.feature_rows = 8;
  g.feature_cols = 8;
  g.input_height = g.input_width = 16;
  const Box b = feature_to_input_box(g, 0, 0);  // starts at -2 before clipping
  CHECK(b.row0 == 0);
  CHECK(b.col0 == 0);
  CHECK(b.row1 == 3);
  const Box e = feature_to_input_box(g, 7, 7);
  CHECK(e.row1 == 16);
  CHECK(e.col1 == 16);
}

TEST_CASE("out-of-range cells are rejected") {
  RFGeometry g;
  g.feature_rows = 4;
  g.feature_cols = 4;
  g.input_height = g.input_width = 8;
  CHECK_THROWS_AS(feature_to_input_box(g, 4, 0), IndexError);
  CHECK_THROWS_AS(feature_to_input_box(g, 0, -1), IndexError);
}

TEST_CASE("geometry agrees with brute-force sensitivity masks") {
  // random small stacks; compare the analytic box of a random cell against
  // the set of inputs that numerically influence that cell
  Rng rng(99);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<LayerSpec> layers;
    const int nlayers = 1 + int(rng.below(3));
    for (int l = 0; l < nlayers; ++l) {
      LayerSpec spec;
      spec.kernel = rng.below(2) == 0 ? 1 : 3;
      spec.stride = 1 + int(rng.below(2));
      spec.out_channels = 2;
      spec.pad = 0;
      spec.relu = false;  // keep the map linear so sensitivity is exact
      spec.norm = false;
      layers.push_back(spec);
    }
    const int side = 14;
    BackboneConfig cfg;
    cfg.in_channels = 1;
    cfg.input_height = cfg.input_width = side;
    cfg.layers = layers;
    RFGeometry g;
    try {
      g = compute_geometry(cfg);
    } catch (const ConfigError&) {
      continue;  // stack ate the whole image; try the next one
    }
    Backbone<double> bb(cfg, 7);
    const int cr = int(rng.below(std::uint64_t(g.feature_rows)));
    const int cc = int(rng.below(std::uint64_t(g.feature_cols)));
    const Box box = feature_to_input_box(g, cr, cc);

    Image<double> img(1, side, side);
    for (auto& v : img.v) v = rng.uniform();
    const FeatureMap<double> base = bb.features(img);
    const double* cell = base.cell(cr, cc);
    const std::vector<double> before(cell, cell + base.depth);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        Image<double> bumped = img;
        bumped.at(0, y, x) += 1.0;
        const FeatureMap<double> fm = bb.features(bumped);
        const double* after = fm.cell(cr, cc);
        bool changed = false;
        for (int d = 0; d < fm.depth; ++d)
          if (after[d] != before[std::size_t(d)]) changed = true;
        if (!box.contains(y, x)) CHECK(!changed);
      }
    }
  }
}
