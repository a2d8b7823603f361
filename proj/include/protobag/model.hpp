#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "protobag/backbone.hpp"
#include "protobag/classifier.hpp"
#include "protobag/losses.hpp"
#include "protobag/prototypes.hpp"
#include "protobag/types.hpp"

namespace protobag {

// Full inference trace of one image; explanation and evaluation code reads
// the intermediates instead of recomputing them.
template <class T>
struct Inference {
  FeatureMap<T> features;
  MapStack<T> distances;
  MapStack<T> similarities;
  std::vector<std::vector<int>> topk;  // per prototype, cell indices
  std::vector<T> pooled;
  std::vector<T> logits;
  std::vector<T> probs;
  int predicted = 0;
};

template <class T>
struct Model {
  BackboneConfig backbone_config;
  Backbone<T> backbone;
  PrototypeBank<T> bank;
  Head<T> head;
  double epsilon = 1e-4;
  int k = 5;
  // per-channel input normalization, applied before the backbone
  std::vector<T> input_mean, input_std;

  const RFGeometry& geometry() const { return backbone.geometry(); }

  Image<T> normalize(const Image<T>& raw) const {
    if (int(input_mean.size()) != raw.channels ||
        int(input_std.size()) != raw.channels)
      throw InputError("model: normalization constants missing for input channels");
    Image<T> out = raw;
    const std::size_t plane = std::size_t(raw.height) * raw.width;
    for (int c = 0; c < raw.channels; ++c) {
      T* p = out.v.data() + std::size_t(c) * plane;
      const T m = input_mean[std::size_t(c)];
      const T s = input_std[std::size_t(c)];
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
    }
    return out;
  }

  // `img` must already be normalized (see normalize()).
  Inference<T> infer(const Image<T>& img) const {
    Inference<T> inf;
    inf.features = backbone.features(img);
    inf.distances = squared_distance_maps(inf.features, bank);
    inf.similarities = similarity_maps(inf.distances, epsilon);
    inf.topk.resize(std::size_t(bank.count()));
    inf.pooled.resize(std::size_t(bank.count()));
    const int cells = inf.similarities.cells();
    for (int j = 0; j < bank.count(); ++j) {
      inf.topk[std::size_t(j)] = topk_cells(inf.similarities.map(j), cells, k);
      double s = 0.0;
      for (int cell : inf.topk[std::size_t(j)])
        s += double(inf.similarities.map(j)[cell]);
      inf.pooled[std::size_t(j)] = T(s / double(inf.topk[std::size_t(j)].size()));
    }
    inf.logits = head.forward(inf.pooled);
    inf.probs = softmax(inf.logits);
    inf.predicted = 0;
    for (int c = 1; c < head.classes; ++c)
      if (inf.logits[std::size_t(c)] > inf.logits[std::size_t(inf.predicted)])
        inf.predicted = c;
    return inf;
  }

  Inference<T> infer_raw(const Image<T>& raw) const { return infer(normalize(raw)); }
};

// Rescale any prototype whose L2 norm exceeds `radius` back onto the sphere.
// Keeps the squared-distance arithmetic well away from overflow.
template <class T>
void clamp_prototype_norms(PrototypeBank<T>& bank, double radius) {
  for (int j = 0; j < bank.count(); ++j) {
    T* p = bank.vec(j);
    double n2 = 0.0;
    for (int d = 0; d < bank.dim; ++d) n2 += double(p[d]) * double(p[d]);
    const double n = std::sqrt(n2);
    if (n > radius) {
      const double f = radius / n;
      for (int d = 0; d < bank.dim; ++d) p[d] = T(double(p[d]) * f);
    }
  }
}

}  // namespace protobag
