#include "protobag/explain.hpp"

#include <algorithm>
#include <cmath>

#include "protobag/imageio.hpp"

namespace protobag {

namespace {

PrototypeExplanation explain_prototype(const Model<float>& model,
                                       const Inference<float>& inf, int j) {
  PrototypeExplanation pe;
  pe.prototype = j;
  pe.cls = model.bank.class_of(j);
  pe.pooled = double(inf.pooled[std::size_t(j)]);
  const float* sim = inf.similarities.map(j);
  const int cols = inf.similarities.cols;
  for (int cell : inf.topk[std::size_t(j)]) {
    PartEntry e;
    e.cell_row = cell / cols;
    e.cell_col = cell % cols;
    e.box = feature_to_input_box(inf.features.geom, e.cell_row, e.cell_col);
    e.score = double(sim[cell]);
    pe.parts.push_back(e);
  }
  for (std::size_t a = 0; a < pe.parts.size() && !pe.overlapping_parts; ++a)
    for (std::size_t b = a + 1; b < pe.parts.size(); ++b)
      if (pe.parts[a].box.intersects(pe.parts[b].box)) {
        pe.overlapping_parts = true;
        break;
      }
  return pe;
}

}  // namespace

ExplanationReport local_explanation(const Model<float>& model, const ImageF& raw,
                                    const std::string& sample_id) {
  const Inference<float> inf = model.infer_raw(raw);
  ExplanationReport rep;
  rep.sample_id = sample_id;
  rep.method = "rf-box";
  rep.k = int(inf.topk.empty() ? 0 : inf.topk.front().size());
  rep.predicted = inf.predicted;
  rep.prob_disease = double(inf.probs[1]);
  for (int j = 0; j < model.bank.count(); ++j)
    rep.prototypes.push_back(explain_prototype(model, inf, j));
  return rep;
}

Box percentile_bbox(const Model<float>& model, const ImageF& raw, int prototype,
                    double q, bool* degenerate) {
  if (prototype < 0 || prototype >= model.bank.count())
    throw IndexError("percentile_bbox: prototype id out of range");
  if (q < 0.0 || q > 1.0)
    throw InputError("percentile_bbox: quantile must lie in [0,1]");
  const Inference<float> inf = model.infer_raw(raw);
  const int rows = inf.similarities.rows, cols = inf.similarities.cols;
  ImageF coarse(1, rows, cols);
  std::copy(inf.similarities.map(prototype),
            inf.similarities.map(prototype) + rows * cols, coarse.v.begin());
  const ImageF up = resize_bilinear(coarse, raw.height, raw.width);

  std::vector<float> sorted(up.v);
  std::sort(sorted.begin(), sorted.end());
  if (degenerate) *degenerate = sorted.front() == sorted.back();
  const long long n = (long long)sorted.size();
  const long long idx =
      std::max((long long)0, (long long)std::ceil(q * double(n)) - 1);
  const float tau = sorted[std::size_t(std::min(idx, n - 1))];

  int r0 = raw.height, c0 = raw.width, r1 = -1, c1 = -1;
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      if (up.at(0, y, x) >= tau) {
        r0 = std::min(r0, y);
        c0 = std::min(c0, x);
        r1 = std::max(r1, y);
        c1 = std::max(c1, x);
      }
  if (r1 < 0) return Box{0, 0, raw.height, raw.width};  // unreachable guard
  return Box{r0, c0, r1 + 1, c1 + 1};
}

ExplanationReport percentile_explanation(const Model<float>& model,
                                         const ImageF& raw,
                                         const std::string& sample_id,
                                         double q) {
  const Inference<float> inf = model.infer_raw(raw);
  ExplanationReport rep;
  rep.sample_id = sample_id;
  rep.method = "percentile-box";
  rep.k = 1;
  rep.predicted = inf.predicted;
  rep.prob_disease = double(inf.probs[1]);
  for (int j = 0; j < model.bank.count(); ++j) {
    bool degenerate = false;
    const Box box = percentile_bbox(model, raw, j, q, &degenerate);
    if (degenerate)
      rep.warnings.push_back("prototype " + std::to_string(j) +
                             ": constant similarity map, full-image box");
    PrototypeExplanation pe;
    pe.prototype = j;
    pe.cls = model.bank.class_of(j);
    pe.pooled = double(inf.pooled[std::size_t(j)]);
    PartEntry e;
    const int cells = inf.similarities.rows * inf.similarities.cols;
    const int peak = topk_cells(inf.similarities.map(j), cells, 1).front();
    e.cell_row = peak / inf.similarities.cols;
    e.cell_col = peak % inf.similarities.cols;
    e.box = box;
    e.score = double(inf.similarities.map(j)[peak]);
    pe.parts.push_back(e);
    rep.prototypes.push_back(pe);
  }
  return rep;
}

std::vector<PrototypePatch> global_explanation(const Model<float>& model,
                                               const Dataset& train_set) {
  std::vector<PrototypePatch> out;
  for (int j = 0; j < model.bank.count(); ++j) {
    const Provenance& p = model.bank.provenance[std::size_t(j)];
    if (!p.valid)
      throw DataError("prototype " + std::to_string(j) +
                      " has no provenance; run a push (train with joint epochs) first");
    if (p.sample_index < 0 || p.sample_index >= (long long)train_set.size())
      throw DataError("prototype provenance points outside the given training set");
    const ImageF& src = train_set[std::size_t(p.sample_index)].image;
    PrototypePatch pp;
    pp.prototype = j;
    pp.cls = model.bank.class_of(j);
    pp.prov = p;
    pp.patch = ImageF(src.channels, p.box.height(), p.box.width());
    for (int c = 0; c < src.channels; ++c)
      for (int y = 0; y < p.box.height(); ++y)
        for (int x = 0; x < p.box.width(); ++x)
          pp.patch.at(c, y, x) = src.at(c, p.box.row0 + y, p.box.col0 + x);
    out.push_back(std::move(pp));
  }
  return out;
}

Json explanation_to_json(const ExplanationReport& rep) {
  Json j;
  j["sample_id"] = rep.sample_id;
  j["method"] = rep.method;
  j["k"] = rep.k;
  j["predicted"] = rep.predicted;
  j["prob_disease"] = rep.prob_disease;
  Json arr = Json::array();
  for (const PrototypeExplanation& pe : rep.prototypes) {
    Json jp;
    jp["prototype"] = pe.prototype;
    jp["class"] = pe.cls;
    jp["pooled"] = pe.pooled;
    jp["overlapping_parts"] = pe.overlapping_parts;
    Json parts = Json::array();
    for (const PartEntry& e : pe.parts) {
      Json je;
      je["cell"] = {e.cell_row, e.cell_col};
      je["box"] = {e.box.row0, e.box.col0, e.box.row1, e.box.col1};
      je["score"] = e.score;
      parts.push_back(je);
    }
    jp["parts"] = parts;
    arr.push_back(jp);
  }
  j["prototypes"] = arr;
  j["warnings"] = rep.warnings;
  return j;
}

namespace {

// compact plasma-like ramp, anchors evenly spaced in [0,1]
const std::uint8_t kRamp[][3] = {
    {13, 8, 135},   {84, 2, 163},   {139, 10, 165}, {185, 50, 137},
    {219, 92, 104}, {244, 136, 73}, {254, 188, 43}, {240, 249, 33},
};

void ramp_color(double v, std::uint8_t* rgb) {
  v = std::clamp(v, 0.0, 1.0);
  const int segs = int(sizeof(kRamp) / sizeof(kRamp[0])) - 1;
  const double pos = v * segs;
  const int i = std::min(int(pos), segs - 1);
  const double t = pos - i;
  for (int c = 0; c < 3; ++c)
    rgb[c] = std::uint8_t(std::lround((1.0 - t) * kRamp[i][c] +
                                      t * kRamp[i + 1][c]));
}

std::vector<std::uint8_t> gray_to_rgb(const ImageF& image) {
  if (image.channels != 1)
    throw InputError("overlay rendering expects a grayscale image");
  std::vector<std::uint8_t> rgb(std::size_t(image.height) * image.width * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const float v = std::clamp(image.at(0, y, x), 0.0f, 1.0f);
      const std::uint8_t g = std::uint8_t(std::lround(v * 255.0f));
      const std::size_t o = (std::size_t(y) * image.width + x) * 3;
      rgb[o] = rgb[o + 1] = rgb[o + 2] = g;
    }
  return rgb;
}

}  // namespace

std::vector<std::uint8_t> render_overlay(const ImageF& image,
                                         const std::vector<float>& map,
                                         int map_rows, int map_cols,
                                         double vmax) {
  if (map.size() != std::size_t(map_rows) * map_cols)
    throw InputError("overlay: map size mismatch");
  if (!(vmax > 0)) throw InputError("overlay: vmax must be positive");
  ImageF coarse(1, map_rows, map_cols);
  std::copy(map.begin(), map.end(), coarse.v.begin());
  const ImageF up = resize_bilinear(coarse, image.height, image.width);
  std::vector<std::uint8_t> rgb = gray_to_rgb(image);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const double v = std::clamp(double(up.at(0, y, x)) / vmax, 0.0, 1.0);
      const double alpha = 0.6 * v;
      if (alpha == 0.0) continue;
      std::uint8_t color[3];
      ramp_color(v, color);
      const std::size_t o = (std::size_t(y) * image.width + x) * 3;
      for (int c = 0; c < 3; ++c)
        rgb[o + c] = std::uint8_t(
            std::lround((1.0 - alpha) * rgb[o + c] + alpha * color[c]));
    }
  return rgb;
}

std::vector<std::uint8_t> render_boxes(const ImageF& image,
                                       const std::vector<Box>& boxes) {
  std::vector<std::uint8_t> rgb = gray_to_rgb(image);
  auto paint = [&](int y, int x) {
    if (y < 0 || y >= image.height || x < 0 || x >= image.width) return;
    const std::size_t o = (std::size_t(y) * image.width + x) * 3;
    rgb[o] = 0;
    rgb[o + 1] = 200;
    rgb[o + 2] = 0;
  };
  for (const Box& b : boxes) {
    for (int t = 0; t < 2; ++t) {  // 2 px outline, drawn inward
      for (int x = b.col0; x < b.col1; ++x) {
        paint(b.row0 + t, x);
        paint(b.row1 - 1 - t, x);
      }
      for (int y = b.row0; y < b.row1; ++y) {
        paint(y, b.col0 + t);
        paint(y, b.col1 - 1 - t);
      }
    }
  }
  return rgb;
}

}  // namespace protobag
