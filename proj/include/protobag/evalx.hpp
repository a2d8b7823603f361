#pragma once

#include <vector>

#include "protobag/data.hpp"
#include "protobag/geometry.hpp"
#include "protobag/model.hpp"

namespace protobag {

struct LocalizationResult {
  std::vector<double> precision_at;  // entry i = precision@(i+1), pooled
  double mean_at_k = 0.0;            // per-image precision@k
  double sd_at_k = 0.0;
  long long images = 0;
  long long parts = 0;  // (image, prototype, part) triples at k
};

// Precision of disease-prototype parts against lesion annotations, over the
// diseased images of `data`. A part hits if its box contains a marker, or (in
// mask mode) overlaps the lesion mask.
LocalizationResult localization_precision(const Model<float>& model,
                                          const Dataset& data, int k,
                                          bool mask_intersection, int threads);

// The top-k receptive-field boxes of every prototype on this (already
// inferred) image; the evidence set the occlusion tests keep.
std::vector<Box> evidence_boxes(const Inference<float>& inf);

// Fill everything outside `keep` with `fill` (normalized-space value).
ImageF occlude_outside(const ImageF& normalized, const std::vector<Box>& keep,
                       float fill);

// Fill the inside of `boxes` with `fill`.
ImageF occlude_inside(const ImageF& normalized, const std::vector<Box>& boxes,
                      float fill);

struct FaithfulnessResult {
  // indexed by class
  std::vector<double> mean_prob_orig, sd_prob_orig;
  std::vector<double> mean_prob_occl, sd_prob_occl;
  double auc_orig = 0.0;
  double auc_occl = 0.0;
  std::vector<double> prob_orig, prob_occl;  // per sample
  std::vector<int> labels;
};

// Re-scores the dataset with everything but the prototypes' top-k parts
// occluded. fill_original keeps the original pixels (a deliberate no-op used
// to validate the plumbing: deltas must be exactly zero).
FaithfulnessResult occlusion_faithfulness(const Model<float>& model,
                                          const Dataset& data, double fill,
                                          bool fill_original, int threads);

struct ImportanceResult {
  // per-sample change in disease probability when the chosen prototype's
  // parts are additionally occluded, split by true class
  std::vector<double> deltas;
  std::vector<int> labels;
  std::vector<double> mean_by_class, sd_by_class;
};

ImportanceResult prototype_importance(const Model<float>& model,
                                      const Dataset& data, int prototype,
                                      double fill, int threads);

// Per-sample mean of prototype_importance deltas over all prototypes of the
// class; the per-direction sign statistic is computed from this.
ImportanceResult class_importance(const Model<float>& model, const Dataset& data,
                                  int cls, double fill, int threads);

}  // namespace protobag
