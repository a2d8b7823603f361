#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "protobag/backbone.hpp"
#include "protobag/data.hpp"
#include "protobag/losses.hpp"
#include "protobag/train_config.hpp"

namespace protobag {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string source = "synthetic";  // or "folder"
  long long n_train = 2000;
  long long n_val = 300;
  long long n_test = 500;
  SynthConfig synth;
  std::string root;                            // folder mode
  std::map<std::string, std::string> manifests;  // split -> csv path
};

struct ModelConfig {
  int prototypes_per_class = 5;
  int classes = 2;
  int k = 5;
  double epsilon = 1e-4;
  std::string head = "soft_aggregation";  // or "dense"
};

struct ExperimentConfig {
  std::string mode = "proto-bagnet";  // or "protopnet-baseline"
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = auto
  bool deterministic = false;
  std::string out_dir = "out";
  std::string backbone_preset = "desk";  // or "bagnet33" or "custom"
  BackboneConfig backbone;
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  DataConfig data;
};

BackboneConfig desk_backbone(int in_channels, int input_side);
BackboneConfig bagnet33_backbone(int in_channels, int input_side);

// Fully expanded defaults for the given mode and backbone preset.
ExperimentConfig default_config(const std::string& mode = "proto-bagnet",
                                const std::string& backbone_preset = "desk");

// Round trip. Parsing starts from the presets named in the JSON, then applies
// whatever keys are present on top, so a file holding only overrides is valid
// and a saved snapshot is fully explicit.
Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const Json& j);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

// Applies "dotted.path=value" onto the JSON form (value parsed as JSON when
// possible, kept as string otherwise). Unknown paths throw ConfigError when
// the config is re-parsed.
void apply_override(Json& j, const std::string& assignment);

// Cross-field checks: feature geometry exists, lesions fit inside one
// receptive field, k sane, mode/head consistent.
void validate_config(const ExperimentConfig& cfg);

}  // namespace protobag
