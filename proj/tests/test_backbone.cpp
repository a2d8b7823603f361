#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "protobag/backbone.hpp"
#include "protobag/errors.hpp"
#include "protobag/rng.hpp"

using namespace protobag;
using testutil::naive_forward;
using testutil::random_image;

namespace {

BackboneConfig make_config(int in_c, int side, std::vector<LayerSpec> layers) {
  BackboneConfig cfg;
  cfg.in_channels = in_c;
  cfg.input_height = side;
  cfg.input_width = side;
  cfg.layers = std::move(layers);
  return cfg;
}

}  // namespace

TEST_CASE("features match a naive convolution reference") {
  const std::vector<BackboneConfig> configs = {
      make_config(1, 9, {{3, 1, 4, 0, true, false}}),
      make_config(2, 10, {{3, 2, 3, 1, true, true}, {1, 1, 5, 0, false, false}}),
      make_config(1, 12,
                  {{3, 1, 4, 0, true, true},
                   {3, 2, 6, 0, true, true},
                   {1, 1, 3, 0, true, false}}),
      make_config(3, 8, {{1, 1, 2, 0, false, false}, {3, 1, 4, 1, true, false}}),
  };
  int cfg_idx = 0;
  for (const auto& cfg : configs) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      CAPTURE(cfg_idx);
      CAPTURE(seed);
      Backbone<double> bb(cfg, seed);
      Rng rng(seed * 977 + 5);
      const Image<double> img =
          random_image<double>(cfg.in_channels, cfg.input_height,
                               cfg.input_width, rng);
      const FeatureMap<double> fm = bb.features(img);
      const RFGeometry g = compute_geometry(cfg);
      REQUIRE(fm.rows == g.feature_rows);
      REQUIRE(fm.cols == g.feature_cols);

      const testutil::NaiveTrace tr = naive_forward(bb, img);
      const auto& last = bb.layer(bb.layer_count() - 1);
      const std::vector<double> want =
          testutil::chw_to_hwd(tr.post.back(), last.spec.out_channels,
                               last.hout, last.wout);
      REQUIRE(fm.v.size() == want.size());
      double worst = 0.0;
      for (std::size_t i = 0; i < want.size(); ++i)
        worst = std::max(worst, std::abs(fm.v[i] - want[i]));
      CHECK(worst < 1e-12);
    }
    ++cfg_idx;
  }
}

TEST_CASE("batch forward equals single-image forward for every thread count") {
  const BackboneConfig cfg = make_config(
      1, 14, {{3, 1, 4, 0, true, true}, {3, 2, 6, 0, true, true}});
  Backbone<float> bb(cfg, 11);
  Rng rng(123);
  std::vector<Image<float>> imgs;
  std::vector<const Image<float>*> batch;
  for (int i = 0; i < 5; ++i)
    imgs.push_back(random_image<float>(1, 14, 14, rng));
  for (const auto& im : imgs) batch.push_back(&im);

  std::vector<FeatureMap<float>> singles;
  for (const auto& im : imgs) singles.push_back(bb.features(im));

  for (int threads : {1, 3}) {
    CAPTURE(threads);
    Backbone<float>::Cache cache;
    bb.forward_batch(batch, /*update_stats=*/false, cache, threads);
    for (int i = 0; i < 5; ++i) {
      const FeatureMap<float> fm = bb.feature_map(cache, i);
      REQUIRE(fm.v.size() == singles[std::size_t(i)].v.size());
      int mismatches = 0;
      for (std::size_t j = 0; j < fm.v.size(); ++j)
        if (fm.v[j] != singles[std::size_t(i)].v[j]) ++mismatches;
      CHECK(mismatches == 0);
    }
  }
}

TEST_CASE("stat update folds the batch statistics into the running values") {
  const BackboneConfig cfg =
      make_config(1, 6, {{3, 1, 3, 0, false, true}});
  Backbone<float> bb(cfg, 21);
  Rng rng(77);
  std::vector<Image<float>> imgs;
  std::vector<const Image<float>*> batch;
  for (int i = 0; i < 2; ++i) imgs.push_back(random_image<float>(1, 6, 6, rng));
  for (const auto& im : imgs) batch.push_back(&im);

  // pre-norm conv outputs from the naive reference (double twin, same seed)
  Backbone<double> twin(cfg, 21);
  std::vector<std::vector<double>> pre;
  for (const auto& im : imgs) {
    Image<double> d = image_cast<double>(im);
    twin.norm_identity() = true;  // reference without normalization
    pre.push_back(naive_forward(twin, d).post.back());
  }
  const auto& L = twin.layer(0);
  const std::size_t plane = std::size_t(L.hout) * L.wout;
  std::vector<double> want_mean(3), want_scale(3);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0, q = 0.0;
    for (const auto& p : pre)
      for (std::size_t j = 0; j < plane; ++j) {
        s += p[std::size_t(c) * plane + j];
        q += p[std::size_t(c) * plane + j] * p[std::size_t(c) * plane + j];
      }
    const double count = double(pre.size()) * double(plane);
    const double m = s / count;
    const double var = q / count - m * m;
    want_mean[std::size_t(c)] = 0.9 * 0.0 + 0.1 * m;  // momentum 0.1, fresh stats
    const double rv = 0.9 * 1.0 + 0.1 * var;
    want_scale[std::size_t(c)] = 1.0 / std::sqrt(rv + 1e-5);
  }

  Backbone<float>::Cache cache;
  bb.forward_batch(batch, /*update_stats=*/true, cache, 1);
  for (int c = 0; c < 3; ++c) {
    CHECK(double(bb.layer(0).run_mean[std::size_t(c)]) ==
          doctest::Approx(want_mean[std::size_t(c)]).epsilon(1e-5));
  }
  // outputs must be normalized with the just-updated statistics
  for (int i = 0; i < 2; ++i) {
    const FeatureMap<float> fm = bb.feature_map(cache, i);
    for (int c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < plane; ++j) {
        const double want = (pre[std::size_t(i)][std::size_t(c) * plane + j] -
                             want_mean[std::size_t(c)]) *
                            want_scale[std::size_t(c)];
        const double got =
            double(fm.v[j * 3 + std::size_t(c)]);
        CHECK(got == doctest::Approx(want).epsilon(1e-4));
      }
  }
}

TEST_CASE("norm identity switch bypasses normalization") {
  BackboneConfig with_norm = make_config(
      1, 10, {{3, 1, 4, 0, true, true}, {3, 2, 5, 0, true, true}});
  BackboneConfig no_norm = with_norm;
  for (auto& l : no_norm.layers) l.norm = false;

  Backbone<double> a(with_norm, 31);
  Backbone<double> b(no_norm, 31);
  a.norm_identity() = true;

  Rng rng(9);
  const Image<double> img = random_image<double>(1, 10, 10, rng);
  const FeatureMap<double> fa = a.features(img);
  const FeatureMap<double> fb = b.features(img);
  REQUIRE(fa.v.size() == fb.v.size());
  int mismatches = 0;
  for (std::size_t i = 0; i < fa.v.size(); ++i)
    if (fa.v[i] != fb.v[i]) ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("feature maps translate with the input") {
  const BackboneConfig cfg = make_config(
      1, 32,
      {{3, 1, 4, 0, true, true}, {3, 2, 5, 0, true, true}, {3, 2, 6, 0, true, false}});
  Backbone<double> bb(cfg, 41);
  const RFGeometry g = bb.geometry();
  REQUIRE(g.total_stride == 4);

  Rng rng(55);
  const Image<double> img = random_image<double>(1, 32, 32, rng);
  Image<double> shifted = random_image<double>(1, 32, 32, rng);  // rows 0-3 noise
  for (int y = g.total_stride; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      shifted.at(0, y, x) = img.at(0, y - g.total_stride, x);

  const FeatureMap<double> fa = bb.features(img);
  const FeatureMap<double> fb = bb.features(shifted);
  for (int r = 1; r < fb.rows; ++r)
    for (int c = 0; c < fb.cols; ++c)
      for (int d = 0; d < fb.depth; ++d)
        CHECK(fb.cell(r, c)[d] ==
              doctest::Approx(fa.cell(r - 1, c)[d]).epsilon(1e-10));
}

TEST_CASE("backward matches finite differences") {
  const BackboneConfig cfg = make_config(
      1, 10, {{3, 1, 3, 0, true, true}, {3, 2, 4, 0, true, false}});

  // pick an instance whose pre-relu values sit clear of the kink
  Backbone<double> bb(cfg, 0);
  Image<double> img;
  for (std::uint64_t seed = 1;; ++seed) {
    bb = Backbone<double>(cfg, seed);
    Rng rng(seed + 1000);
    img = random_image<double>(1, 10, 10, rng);
    if (testutil::min_relu_margin(bb, naive_forward(bb, img)) > 1e-3) break;
    REQUIRE(seed < 50);
  }

  const FeatureMap<double> fm0 = bb.features(img);
  Rng grng(7);
  std::vector<double> G(fm0.v.size());
  for (auto& g : G) g = grng.uniform(-1.0, 1.0);

  auto loss = [&](const Backbone<double>& net, const Image<double>& x) {
    const FeatureMap<double> fm = net.features(x);
    double s = 0.0;
    for (std::size_t i = 0; i < fm.v.size(); ++i) s += G[i] * fm.v[i];
    return s;
  };

  Backbone<double>::Cache cache;
  std::vector<const Image<double>*> batch{&img};
  bb.forward_batch(batch, /*update_stats=*/false, cache, 1);
  Backbone<double>::Grads grads;
  grads.resize_like(bb);
  std::vector<double> dinput;
  bb.backward_item(cache, 0, G.data(), grads, &dinput);

  const double h = 1e-5;
  auto check_close = [](double fd, double an) {
    CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(an)));
  };

  for (int li = 0; li < bb.layer_count(); ++li) {
    auto& L = bb.layer(li);
    for (std::size_t j = 0; j < L.w.size(); ++j) {
      const double orig = L.w[j];
      L.w[j] = orig + h;
      const double fp = loss(bb, img);
      L.w[j] = orig - h;
      const double fmv = loss(bb, img);
      L.w[j] = orig;
      check_close((fp - fmv) / (2 * h), grads.w[std::size_t(li)][j]);
    }
    for (std::size_t j = 0; j < L.b.size(); ++j) {
      const double orig = L.b[j];
      L.b[j] = orig + h;
      const double fp = loss(bb, img);
      L.b[j] = orig - h;
      const double fmv = loss(bb, img);
      L.b[j] = orig;
      check_close((fp - fmv) / (2 * h), grads.b[std::size_t(li)][j]);
    }
  }
  for (std::size_t j = 0; j < img.v.size(); ++j) {
    const double orig = img.v[j];
    img.v[j] = orig + h;
    const double fp = loss(bb, img);
    img.v[j] = orig - h;
    const double fmv = loss(bb, img);
    img.v[j] = orig;
    check_close((fp - fmv) / (2 * h), dinput[j]);
  }
}

TEST_CASE("input shape mismatch raises") {
  const BackboneConfig cfg = make_config(1, 8, {{3, 1, 2, 0, true, false}});
  Backbone<float> bb(cfg, 1);
  CHECK_THROWS_AS(bb.features(ImageF(1, 9, 8)), InputError);
  CHECK_THROWS_AS(bb.features(ImageF(2, 8, 8)), InputError);
}

TEST_CASE("vanishing feature maps are rejected") {
  CHECK_THROWS_AS(compute_geometry(make_config(1, 2, {{3, 1, 2, 0, true, false}})),
                  ConfigError);
  CHECK_THROWS_AS(
      compute_geometry(make_config(1, 8, {{3, 4, 2, 0, true, false},
                                          {3, 1, 2, 0, true, false}})),
      ConfigError);
}
