#include "protobag/evalx.hpp"

#include <algorithm>
#include <cmath>

#include "protobag/metrics.hpp"
#include "protobag/util.hpp"

namespace protobag {

namespace {

bool box_hits(const Box& box, const LabeledSample& s, bool mask_intersection) {
  if (mask_intersection) {
    if (s.mask.v.empty()) return false;
    for (int y = box.row0; y < box.row1; ++y)
      for (int x = box.col0; x < box.col1; ++x)
        if (s.mask.at(0, y, x)) return true;
    return false;
  }
  for (const auto& m : s.markers)
    if (box.contains(m.first, m.second)) return true;
  return false;
}

void class_stats(const std::vector<double>& vals, const std::vector<int>& labels,
                 int classes, std::vector<double>& mean, std::vector<double>& sd) {
  mean.assign(std::size_t(classes), 0.0);
  sd.assign(std::size_t(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    std::vector<double> v;
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (labels[i] == c) v.push_back(vals[i]);
    mean[std::size_t(c)] = mean_of(v);
    sd[std::size_t(c)] = sd_of(v);
  }
}

}  // namespace

LocalizationResult localization_precision(const Model<float>& model,
                                          const Dataset& data, int k,
                                          bool mask_intersection, int threads) {
  if (k < 1) throw InputError("localization: k must be >= 1");
  std::vector<int> diseased;
  for (int i = 0; i < int(data.size()); ++i) {
    const LabeledSample& s = data[std::size_t(i)];
    if (s.label != 1) continue;
    if (mask_intersection ? s.mask.v.empty() : s.markers.empty()) continue;
    diseased.push_back(i);
  }
  if (diseased.empty())
    throw InputError("localization: no annotated diseased samples in the dataset");

  const int n = int(diseased.size());
  // per image: hits[k'] pooled over disease prototypes, plus per-image value
  std::vector<std::vector<double>> prec((std::size_t)n);
  std::vector<double> per_image(std::size_t(n), 0.0);
  std::vector<long long> parts(std::size_t(n), 0);
  parallel_for(n, threads, [&](int t) {
    const LabeledSample& s = data[std::size_t(diseased[std::size_t(t)])];
    const Inference<float> inf = model.infer_raw(s.image);
    const int cols = inf.similarities.cols;
    prec[std::size_t(t)].assign(std::size_t(k), 0.0);
    int protos = 0;
    for (int j = 0; j < model.bank.count(); ++j) {
      if (model.bank.class_of(j) != 1) continue;
      ++protos;
      const auto& cells = inf.topk[std::size_t(j)];
      const int kk = std::min<int>(k, int(cells.size()));
      int hits = 0;
      for (int i = 0; i < kk; ++i) {
        const int cell = cells[std::size_t(i)];
        const Box box =
            feature_to_input_box(inf.features.geom, cell / cols, cell % cols);
        if (box_hits(box, s, mask_intersection)) ++hits;
        prec[std::size_t(t)][std::size_t(i)] += double(hits) / double(i + 1);
      }
      for (int i = kk; i < k; ++i)
        prec[std::size_t(t)][std::size_t(i)] += double(hits) / double(kk);
      parts[std::size_t(t)] += kk;
    }
    if (protos == 0) return;
    for (double& v : prec[std::size_t(t)]) v /= double(protos);
    per_image[std::size_t(t)] = prec[std::size_t(t)].back();
  });

  LocalizationResult out;
  out.images = n;
  out.precision_at.assign(std::size_t(k), 0.0);
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < k; ++i)
      out.precision_at[std::size_t(i)] += prec[std::size_t(t)][std::size_t(i)];
    out.parts += parts[std::size_t(t)];
  }
  for (double& v : out.precision_at) v /= double(n);
  out.mean_at_k = mean_of(per_image);
  out.sd_at_k = sd_of(per_image);
  return out;
}

std::vector<Box> evidence_boxes(const Inference<float>& inf) {
  std::vector<Box> out;
  const int cols = inf.similarities.cols;
  for (const auto& cells : inf.topk)
    for (int cell : cells)
      out.push_back(
          feature_to_input_box(inf.features.geom, cell / cols, cell % cols));
  return out;
}

ImageF occlude_outside(const ImageF& normalized, const std::vector<Box>& keep,
                       float fill) {
  ImageF out(normalized.channels, normalized.height, normalized.width);
  std::fill(out.v.begin(), out.v.end(), fill);
  for (const Box& b : keep)
    for (int c = 0; c < normalized.channels; ++c)
      for (int y = b.row0; y < b.row1; ++y)
        for (int x = b.col0; x < b.col1; ++x)
          out.at(c, y, x) = normalized.at(c, y, x);
  return out;
}

ImageF occlude_inside(const ImageF& normalized, const std::vector<Box>& boxes,
                      float fill) {
  ImageF out = normalized;
  for (const Box& b : boxes)
    for (int c = 0; c < normalized.channels; ++c)
      for (int y = b.row0; y < b.row1; ++y)
        for (int x = b.col0; x < b.col1; ++x)
          out.at(c, y, x) = fill;
  return out;
}

FaithfulnessResult occlusion_faithfulness(const Model<float>& model,
                                          const Dataset& data, double fill,
                                          bool fill_original, int threads) {
  if (data.empty()) throw InputError("faithfulness: empty dataset");
  const int n = int(data.size());
  FaithfulnessResult out;
  out.prob_orig.resize(std::size_t(n));
  out.prob_occl.resize(std::size_t(n));
  out.labels.resize(std::size_t(n));
  parallel_for(n, threads, [&](int i) {
    const LabeledSample& s = data[std::size_t(i)];
    const ImageF norm = model.normalize(s.image);
    const Inference<float> inf = model.infer(norm);
    out.prob_orig[std::size_t(i)] = double(inf.probs[1]);
    out.labels[std::size_t(i)] = s.label;
    const ImageF occl = fill_original
                            ? norm
                            : occlude_outside(norm, evidence_boxes(inf),
                                              float(fill));
    const Inference<float> inf2 = model.infer(occl);
    out.prob_occl[std::size_t(i)] = double(inf2.probs[1]);
  });
  class_stats(out.prob_orig, out.labels, model.head.classes, out.mean_prob_orig,
              out.sd_prob_orig);
  class_stats(out.prob_occl, out.labels, model.head.classes, out.mean_prob_occl,
              out.sd_prob_occl);
  out.auc_orig = auc_score(out.prob_orig, out.labels);
  out.auc_occl = auc_score(out.prob_occl, out.labels);
  return out;
}

namespace {

ImportanceResult importance_impl(const Model<float>& model, const Dataset& data,
                                 const std::vector<int>& prototypes, double fill,
                                 int threads) {
  if (data.empty()) throw InputError("importance: empty dataset");
  const int n = int(data.size());
  ImportanceResult out;
  out.deltas.resize(std::size_t(n));
  out.labels.resize(std::size_t(n));
  parallel_for(n, threads, [&](int i) {
    const LabeledSample& s = data[std::size_t(i)];
    const ImageF norm = model.normalize(s.image);
    const Inference<float> inf = model.infer(norm);
    const ImageF base = occlude_outside(norm, evidence_boxes(inf), float(fill));
    const double prob_base = double(model.infer(base).probs[1]);
    const int cols = inf.similarities.cols;
    double acc = 0.0;
    for (int j : prototypes) {
      std::vector<Box> boxes;
      for (int cell : inf.topk[std::size_t(j)])
        boxes.push_back(
            feature_to_input_box(inf.features.geom, cell / cols, cell % cols));
      const ImageF masked = occlude_inside(base, boxes, float(fill));
      acc += double(model.infer(masked).probs[1]) - prob_base;
    }
    out.deltas[std::size_t(i)] = acc / double(prototypes.size());
    out.labels[std::size_t(i)] = s.label;
  });
  class_stats(out.deltas, out.labels, model.head.classes, out.mean_by_class,
              out.sd_by_class);
  return out;
}

}  // namespace

ImportanceResult prototype_importance(const Model<float>& model,
                                      const Dataset& data, int prototype,
                                      double fill, int threads) {
  if (prototype < 0 || prototype >= model.bank.count())
    throw IndexError("importance: prototype id out of range");
  return importance_impl(model, data, {prototype}, fill, threads);
}

ImportanceResult class_importance(const Model<float>& model, const Dataset& data,
                                  int cls, double fill, int threads) {
  std::vector<int> protos;
  for (int j = 0; j < model.bank.count(); ++j)
    if (model.bank.class_of(j) == cls) protos.push_back(j);
  if (protos.empty()) throw InputError("importance: class has no prototypes");
  return importance_impl(model, data, protos, fill, threads);
}

}  // namespace protobag
