#pragma once

// Shared fixtures and brute-force references for the test binaries. Everything
// here is deliberately naive: plain loops, double precision, no reuse of the
// library's fast paths, so the two sides of every comparison are independent.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <system_error>
#include <vector>

#include "protobag/backbone.hpp"
#include "protobag/classifier.hpp"
#include "protobag/model.hpp"
#include "protobag/prototypes.hpp"
#include "protobag/rng.hpp"
#include "protobag/types.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0;; ++i) {
      auto p = base / ("protobag-test-" + std::to_string(::getpid()) + "-" +
                       std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directory(p, ec)) {
        path = p;
        return;
      }
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

template <class T>
protobag::Image<T> random_image(int c, int h, int w, protobag::Rng& rng,
                                double lo = -1.0, double hi = 1.0) {
  protobag::Image<T> img(c, h, w);
  for (auto& x : img.v) x = T(rng.uniform(lo, hi));
  return img;
}

// Plain triple-loop reference of the backbone stack. `pre` holds the values
// feeding each relu (post conv, post norm), `post` the layer outputs.
struct NaiveTrace {
  std::vector<std::vector<double>> pre, post;
};

inline NaiveTrace naive_forward(const protobag::Backbone<double>& bb,
                                const protobag::Image<double>& img) {
  NaiveTrace tr;
  std::vector<double> cur = img.v;
  for (int li = 0; li < bb.layer_count(); ++li) {
    const auto& L = bb.layer(li);
    const int k = L.spec.kernel, s = L.spec.stride, pad = L.spec.pad;
    std::vector<double> out(std::size_t(L.spec.out_channels) * L.hout * L.wout,
                            0.0);
    for (int co = 0; co < L.spec.out_channels; ++co) {
      for (int oy = 0; oy < L.hout; ++oy) {
        for (int ox = 0; ox < L.wout; ++ox) {
          double acc = L.b[std::size_t(co)];
          for (int ci = 0; ci < L.cin; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s + ky - pad;
                const int ix = ox * s + kx - pad;
                if (iy < 0 || iy >= L.hin || ix < 0 || ix >= L.win) continue;
                acc += L.w[((std::size_t(co) * L.cin + ci) * k + ky) * k + kx] *
                       cur[(std::size_t(ci) * L.hin + iy) * L.win + ix];
              }
            }
          }
          out[(std::size_t(co) * L.hout + oy) * L.wout + ox] = acc;
        }
      }
    }
    if (L.spec.norm && !bb.norm_identity()) {
      const std::size_t plane = std::size_t(L.hout) * L.wout;
      for (int co = 0; co < L.spec.out_channels; ++co) {
        const double m = L.run_mean[std::size_t(co)];
        const double sc = 1.0 / std::sqrt(L.run_var[std::size_t(co)] + 1e-5);
        for (std::size_t j = 0; j < plane; ++j) {
          double& x = out[std::size_t(co) * plane + j];
          x = (x - m) * sc;
        }
      }
    }
    tr.pre.push_back(out);
    if (L.spec.relu)
      for (auto& x : out) x = x > 0.0 ? x : 0.0;
    tr.post.push_back(out);
    cur = tr.post.back();
  }
  return tr;
}

// Smallest |pre-relu value| across the stack; gradient checks demand this to
// stay clear of the kink so finite differences are exact.
inline double min_relu_margin(const protobag::Backbone<double>& bb,
                              const NaiveTrace& tr) {
  double m = 1e300;
  for (int li = 0; li < bb.layer_count(); ++li) {
    if (!bb.layer(li).spec.relu) continue;
    for (double x : tr.pre[std::size_t(li)]) m = std::min(m, std::abs(x));
  }
  return m;
}

inline std::vector<double> hwd_of(const protobag::FeatureMap<double>& fm) {
  return fm.v;
}

// chw [c][y][x] -> hwd [y][x][c]
inline std::vector<double> chw_to_hwd(const std::vector<double>& chw, int c,
                                      int h, int w) {
  std::vector<double> out(chw.size());
  const std::size_t plane = std::size_t(h) * w;
  for (int d = 0; d < c; ++d)
    for (std::size_t j = 0; j < plane; ++j)
      out[j * std::size_t(c) + d] = chw[std::size_t(d) * plane + j];
  return out;
}

template <class T>
protobag::MapStack<double> brute_distance_maps(
    const protobag::FeatureMap<T>& fm, const protobag::PrototypeBank<T>& bank) {
  protobag::MapStack<double> out(bank.count(), fm.rows, fm.cols);
  for (int j = 0; j < bank.count(); ++j)
    for (int r = 0; r < fm.rows; ++r)
      for (int c = 0; c < fm.cols; ++c) {
        double acc = 0.0;
        for (int d = 0; d < fm.depth; ++d) {
          const double diff =
              double(fm.cell(r, c)[d]) - double(bank.vec(j)[d]);
          acc += diff * diff;
        }
        out.map(j)[r * fm.cols + c] = acc;
      }
  return out;
}

// Full stable sort by (value desc, index asc); the reference for topk_cells.
template <class T>
std::vector<int> brute_topk(const T* map, int cells, int k) {
  std::vector<int> idx((std::size_t)cells);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (map[a] != map[b]) return map[a] > map[b];
    return a < b;
  });
  idx.resize(std::size_t(std::min(k, cells)));
  return idx;
}

// Pair-counting AUC: ties between a positive and a negative score count 1/2.
inline double brute_auc(const std::vector<double>& scores,
                        const std::vector<int>& labels) {
  double num = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  return num / double(pairs);
}

// One-pixel-per-cell model: 1x1 conv with unit weight, no relu, so features
// are exactly the input pixels and every receptive field is a single pixel.
// Prototype values p0 (class 0) and p1 (class 1), unit head weights.
inline protobag::Model<float> pixel_model(int side, float p0, float p1, int k) {
  protobag::BackboneConfig bc;
  bc.in_channels = 1;
  bc.input_height = side;
  bc.input_width = side;
  protobag::LayerSpec ls;
  ls.kernel = 1;
  ls.stride = 1;
  ls.out_channels = 1;
  ls.pad = 0;
  ls.relu = false;
  ls.norm = false;
  bc.layers = {ls};
  protobag::Model<float> m;
  m.backbone_config = bc;
  m.backbone = protobag::Backbone<float>(bc, 1);
  m.backbone.layer(0).w = {1.0f};
  m.backbone.layer(0).b = {0.0f};
  m.bank.per_class = 1;
  m.bank.classes = 2;
  m.bank.dim = 1;
  m.bank.vectors = {p0, p1};
  m.bank.provenance.resize(2);
  m.head = protobag::Head<float>::soft_aggregation_head(2, 1);
  m.epsilon = 1e-4;
  m.k = k;
  m.input_mean = {0.0f};
  m.input_std = {1.0f};
  return m;
}

}  // namespace testutil
