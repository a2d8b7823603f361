#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protobag/config.hpp"
#include "protobag/data.hpp"
#include "protobag/geometry.hpp"
#include "protobag/model.hpp"

namespace protobag {

struct PartEntry {
  int cell_row = 0, cell_col = 0;
  Box box;
  double score = 0.0;  // similarity at the cell
};

struct PrototypeExplanation {
  int prototype = 0;
  int cls = 0;
  double pooled = 0.0;
  bool overlapping_parts = false;
  std::vector<PartEntry> parts;  // descending score; k entries (or M*N if fewer)
};

struct ExplanationReport {
  std::string sample_id;
  std::string method;  // "rf-box" | "percentile-box"
  int k = 0;
  int predicted = 0;
  double prob_disease = 0.0;
  std::vector<PrototypeExplanation> prototypes;
  std::vector<std::string> warnings;
};

// Receptive-field explanation: per prototype, the exact cells used by top-k
// pooling (same selection, same tie-breaking), mapped to input boxes.
ExplanationReport local_explanation(const Model<float>& model, const ImageF& raw,
                                    const std::string& sample_id);

// The ProtoPNet-style baseline box: bilinearly upsampled similarity map,
// thresholded at its q-quantile, tight bounding box of the kept pixels.
// A constant map yields the full image plus a warning via `degenerate`.
Box percentile_bbox(const Model<float>& model, const ImageF& raw, int prototype,
                    double q = 0.95, bool* degenerate = nullptr);

// One percentile box per prototype, packaged like local_explanation.
ExplanationReport percentile_explanation(const Model<float>& model,
                                         const ImageF& raw,
                                         const std::string& sample_id,
                                         double q = 0.95);

struct PrototypePatch {
  int prototype = 0;
  int cls = 0;
  Provenance prov;
  ImageF patch;  // cropped from the source training image
};

// Crops every prototype's provenance box out of its source image. Requires a
// pushed bank (provenance present) and the training set the push saw.
std::vector<PrototypePatch> global_explanation(const Model<float>& model,
                                               const Dataset& train_set);

Json explanation_to_json(const ExplanationReport& rep);

// Heatmap overlay: the map (rows x cols) is upsampled to the image size and
// alpha-blended over the grayscale input; vmax scales map values to [0,1]
// (similarity maps use log(1/epsilon)). Returns interleaved RGB.
std::vector<std::uint8_t> render_overlay(const ImageF& image,
                                         const std::vector<float>& map,
                                         int map_rows, int map_cols,
                                         double vmax);

// Box outlines (2 px, green) on the grayscale input; other pixels untouched.
std::vector<std::uint8_t> render_boxes(const ImageF& image,
                                       const std::vector<Box>& boxes);

}  // namespace protobag
