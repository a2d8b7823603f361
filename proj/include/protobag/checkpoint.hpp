#pragma once

#include <string>

#include "protobag/config.hpp"
#include "protobag/model.hpp"

namespace protobag {

// Fresh model per the config: seeded backbone, uniform prototypes, identity
// input stats (real stats are filled in by the trainer).
Model<float> build_model(const ExperimentConfig& cfg);

// Single-file container: textual header (magic, meta JSON, array manifest
// with name/dtype/shape/offset) followed by raw little-endian float arrays.
// save(load(f)) writes byte-identical files.
void save_checkpoint(const std::string& path, const Model<float>& model,
                     const ExperimentConfig& cfg);

struct LoadedCheckpoint {
  Model<float> model;
  ExperimentConfig config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace protobag
