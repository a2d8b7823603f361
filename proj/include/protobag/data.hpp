#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "protobag/types.hpp"

namespace protobag {

struct LabeledSample {
  ImageF image;                    // [1][side][side], values in [0,1]
  int label = 0;
  Image<std::uint8_t> mask;        // lesion support; empty shape when absent
  std::vector<std::pair<int, int>> markers;  // (row,col) lesion annotations
  std::string id;
  std::string group;               // patient-style grouping key
};

using Dataset = std::vector<LabeledSample>;

struct SynthConfig {
  int image_side = 128;
  double band_center = -1.0;   // row of the band midline; <0 means image center
  double band_amplitude = 12.0;
  double band_thickness = 14.0;
  int lesion_min = 1;          // per diseased image
  int lesion_max = 3;
  double radius_min = 2.0;     // bump radius, pixels
  double radius_max = 5.0;
  double contrast = 0.25;      // bump elevation over the band at its rim
  double noise = 0.05;
  double background = 0.18;
  double band_level = 0.55;
  double balance = 0.5;        // fraction of diseased images
  std::uint64_t seed = 0;
};

void validate_synth_config(const SynthConfig& cfg);

// Label of sample `index` under exact balancing: cumulative counts follow
// floor((i+1)*balance), so any prefix is as balanced as arithmetic allows.
int synth_label(const SynthConfig& cfg, long long index);

// Pure in (seed, index); the dataset is reproducible element by element.
LabeledSample generate_sample(const SynthConfig& cfg, long long index);

Dataset generate_synthetic_dataset(const SynthConfig& cfg, long long n,
                                   int threads = 1);

// Connected components (4-neighborhood) of the mask, one centroid per
// component, snapped onto a pixel of that component.
std::vector<std::pair<int, int>> mask_centroids(const Image<std::uint8_t>& mask);

// Per-channel statistics over every pixel of the dataset.
void dataset_mean_std(const Dataset& data, std::vector<float>& mean,
                      std::vector<float>& stddev);

ImageF normalize_image(const ImageF& img, const std::vector<float>& mean,
                       const std::vector<float>& stddev);
ImageF denormalize_image(const ImageF& img, const std::vector<float>& mean,
                         const std::vector<float>& stddev);

// Writes <dir>/<split>/... PNGs (image + optional mask) and
// <dir>/<split>.csv with rows path,label,group[,mask].
void export_dataset(const Dataset& data, const std::string& dir,
                    const std::string& split);

// Loads the datasets named by {split -> manifest path}. Paths in a manifest
// are relative to `root`. Images are resized to side x side; masks ride along
// nearest-neighbor. Groups must not straddle splits.
std::map<std::string, Dataset> load_image_folder(
    const std::string& root,
    const std::map<std::string, std::string>& split_manifests, int side);

}  // namespace protobag
