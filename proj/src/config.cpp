#include "protobag/config.hpp"

#include <cmath>
#include <fstream>

#include "protobag/classifier.hpp"
#include "protobag/errors.hpp"

namespace protobag {

namespace {

template <class T>
void get_to_if(const Json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) { ok = true; break; }
    if (!ok)
      throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
  }
}

Json layers_to_json(const std::vector<LayerSpec>& layers) {
  Json arr = Json::array();
  for (const LayerSpec& l : layers) {
    Json jl;
    jl["kernel"] = l.kernel;
    jl["stride"] = l.stride;
    jl["out_channels"] = l.out_channels;
    jl["pad"] = l.pad;
    jl["relu"] = l.relu;
    jl["norm"] = l.norm;
    arr.push_back(jl);
  }
  return arr;
}

std::vector<LayerSpec> layers_from_json(const Json& arr) {
  if (!arr.is_array()) throw ConfigError("config: backbone.layers must be an array");
  std::vector<LayerSpec> out;
  for (const Json& jl : arr) {
    check_keys(jl, {"kernel", "stride", "out_channels", "pad", "relu", "norm"},
               "backbone.layers[]");
    LayerSpec l;
    get_to_if(jl, "kernel", l.kernel);
    get_to_if(jl, "stride", l.stride);
    get_to_if(jl, "out_channels", l.out_channels);
    get_to_if(jl, "pad", l.pad);
    get_to_if(jl, "relu", l.relu);
    get_to_if(jl, "norm", l.norm);
    out.push_back(l);
  }
  return out;
}

}  // namespace

BackboneConfig desk_backbone(int in_channels, int input_side) {
  BackboneConfig b;
  b.in_channels = in_channels;
  b.input_height = b.input_width = input_side;
  b.layers = {
      {3, 1, 10, 0, true, false},
      {3, 1, 16, 0, true, true},
      {3, 2, 32, 0, true, true},
      {3, 2, 64, 0, true, true},
      {1, 1, 64, 0, true, false},
  };
  return b;  // receptive field 11, stride 4
}

BackboneConfig bagnet33_backbone(int in_channels, int input_side) {
  BackboneConfig b;
  b.in_channels = in_channels;
  b.input_height = b.input_width = input_side;
  b.layers = {
      {3, 1, 16, 0, true, false},
      {3, 2, 32, 0, true, true},
      {3, 2, 64, 0, true, true},
      {3, 2, 128, 0, true, true},
      {3, 1, 128, 0, true, true},
      {1, 1, 128, 0, true, false},
  };
  return b;  // receptive field 33, stride 8
}

ExperimentConfig default_config(const std::string& mode,
                                const std::string& backbone_preset) {
  ExperimentConfig cfg;
  cfg.mode = mode;
  cfg.backbone_preset = backbone_preset;
  const int side = cfg.data.synth.image_side;
  if (backbone_preset == "bagnet33") {
    cfg.backbone = bagnet33_backbone(1, side);
  } else if (backbone_preset == "desk" || backbone_preset == "custom") {
    cfg.backbone = desk_backbone(1, side);
  } else {
    throw ConfigError("config: unknown backbone preset '" + backbone_preset + "'");
  }
  if (mode == "protopnet-baseline") {
    cfg.model.k = 1;
    cfg.model.head = "dense";
    cfg.loss.l1_similarity = 0.0;
    cfg.loss.dissimilarity = 0.0;
  } else if (mode != "proto-bagnet") {
    throw ConfigError("config: unknown mode '" + mode + "'");
  }
  return cfg;
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["mode"] = cfg.mode;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["deterministic"] = cfg.deterministic;
  j["out_dir"] = cfg.out_dir;
  Json jb;
  jb["preset"] = cfg.backbone_preset;
  jb["in_channels"] = cfg.backbone.in_channels;
  jb["input_side"] = cfg.backbone.input_height;
  jb["layers"] = layers_to_json(cfg.backbone.layers);
  j["backbone"] = jb;
  Json jm;
  jm["prototypes_per_class"] = cfg.model.prototypes_per_class;
  jm["classes"] = cfg.model.classes;
  jm["k"] = cfg.model.k;
  jm["epsilon"] = cfg.model.epsilon;
  jm["head"] = cfg.model.head;
  j["model"] = jm;
  Json jl;
  jl["clst"] = cfg.loss.clst;
  jl["sep"] = cfg.loss.sep;
  jl["l1_classifier"] = cfg.loss.l1_classifier;
  jl["l1_similarity"] = cfg.loss.l1_similarity;
  jl["dissimilarity"] = cfg.loss.dissimilarity;
  j["loss"] = jl;
  Json jt;
  jt["epochs_warm"] = cfg.train.epochs_warm;
  jt["epochs_joint"] = cfg.train.epochs_joint;
  jt["epochs_last"] = cfg.train.epochs_last;
  jt["push_period"] = cfg.train.push_period;
  jt["batch_size"] = cfg.train.batch_size;
  jt["lr_backbone"] = cfg.train.lr_backbone;
  jt["lr_prototypes"] = cfg.train.lr_prototypes;
  jt["lr_head"] = cfg.train.lr_head;
  jt["prototype_norm_radius"] = cfg.train.prototype_norm_radius;
  jt["class_weighted_sampling"] = cfg.train.class_weighted_sampling;
  j["train"] = jt;
  Json jd;
  jd["source"] = cfg.data.source;
  jd["n_train"] = cfg.data.n_train;
  jd["n_val"] = cfg.data.n_val;
  jd["n_test"] = cfg.data.n_test;
  jd["root"] = cfg.data.root;
  jd["manifests"] = cfg.data.manifests;
  Json js;
  js["image_side"] = cfg.data.synth.image_side;
  js["band_center"] = cfg.data.synth.band_center;
  js["band_amplitude"] = cfg.data.synth.band_amplitude;
  js["band_thickness"] = cfg.data.synth.band_thickness;
  js["lesion_min"] = cfg.data.synth.lesion_min;
  js["lesion_max"] = cfg.data.synth.lesion_max;
  js["radius_min"] = cfg.data.synth.radius_min;
  js["radius_max"] = cfg.data.synth.radius_max;
  js["contrast"] = cfg.data.synth.contrast;
  js["noise"] = cfg.data.synth.noise;
  js["background"] = cfg.data.synth.background;
  js["band_level"] = cfg.data.synth.band_level;
  js["balance"] = cfg.data.synth.balance;
  js["seed"] = cfg.data.synth.seed;
  jd["synth"] = js;
  j["data"] = jd;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  check_keys(j, {"mode", "seed", "threads", "deterministic", "out_dir",
                 "backbone", "model", "loss", "train", "data"},
             "top level");
  std::string mode = "proto-bagnet";
  get_to_if(j, "mode", mode);
  std::string preset = "desk";
  if (j.contains("backbone")) {
    check_keys(j.at("backbone"), {"preset", "in_channels", "input_side", "layers"},
               "backbone");
    get_to_if(j.at("backbone"), "preset", preset);
  }
  ExperimentConfig cfg = default_config(mode, preset);
  get_to_if(j, "seed", cfg.seed);
  get_to_if(j, "threads", cfg.threads);
  get_to_if(j, "deterministic", cfg.deterministic);
  get_to_if(j, "out_dir", cfg.out_dir);

  bool synth_seed_given = false;
  if (j.contains("data")) {
    const Json& jd = j.at("data");
    check_keys(jd, {"source", "n_train", "n_val", "n_test", "root", "manifests",
                    "synth"},
               "data");
    get_to_if(jd, "source", cfg.data.source);
    get_to_if(jd, "n_train", cfg.data.n_train);
    get_to_if(jd, "n_val", cfg.data.n_val);
    get_to_if(jd, "n_test", cfg.data.n_test);
    get_to_if(jd, "root", cfg.data.root);
    get_to_if(jd, "manifests", cfg.data.manifests);
    if (jd.contains("synth")) {
      const Json& js = jd.at("synth");
      check_keys(js, {"image_side", "band_center", "band_amplitude",
                      "band_thickness", "lesion_min", "lesion_max", "radius_min",
                      "radius_max", "contrast", "noise", "background",
                      "band_level", "balance", "seed"},
                 "data.synth");
      SynthConfig& s = cfg.data.synth;
      get_to_if(js, "image_side", s.image_side);
      get_to_if(js, "band_center", s.band_center);
      get_to_if(js, "band_amplitude", s.band_amplitude);
      get_to_if(js, "band_thickness", s.band_thickness);
      get_to_if(js, "lesion_min", s.lesion_min);
      get_to_if(js, "lesion_max", s.lesion_max);
      get_to_if(js, "radius_min", s.radius_min);
      get_to_if(js, "radius_max", s.radius_max);
      get_to_if(js, "contrast", s.contrast);
      get_to_if(js, "noise", s.noise);
      get_to_if(js, "background", s.background);
      get_to_if(js, "band_level", s.band_level);
      get_to_if(js, "balance", s.balance);
      synth_seed_given = js.contains("seed");
      get_to_if(js, "seed", s.seed);
    }
  }
  if (!synth_seed_given) cfg.data.synth.seed = cfg.seed;

  // re-expand the preset for the configured input size, then apply overrides
  int side = cfg.data.source == "synthetic" ? cfg.data.synth.image_side
                                            : cfg.backbone.input_height;
  int in_channels = cfg.backbone.in_channels;
  if (j.contains("backbone")) {
    const Json& jb = j.at("backbone");
    get_to_if(jb, "in_channels", in_channels);
    get_to_if(jb, "input_side", side);
  }
  if (cfg.backbone_preset == "bagnet33")
    cfg.backbone = bagnet33_backbone(in_channels, side);
  else
    cfg.backbone = desk_backbone(in_channels, side);
  cfg.backbone_preset = preset;
  if (j.contains("backbone") && j.at("backbone").contains("layers"))
    cfg.backbone.layers = layers_from_json(j.at("backbone").at("layers"));

  if (j.contains("model")) {
    const Json& jm = j.at("model");
    check_keys(jm, {"prototypes_per_class", "classes", "k", "epsilon", "head"},
               "model");
    get_to_if(jm, "prototypes_per_class", cfg.model.prototypes_per_class);
    get_to_if(jm, "classes", cfg.model.classes);
    get_to_if(jm, "k", cfg.model.k);
    get_to_if(jm, "epsilon", cfg.model.epsilon);
    get_to_if(jm, "head", cfg.model.head);
  }
  if (j.contains("loss")) {
    const Json& jl = j.at("loss");
    check_keys(jl, {"clst", "sep", "l1_classifier", "l1_similarity",
                    "dissimilarity"},
               "loss");
    get_to_if(jl, "clst", cfg.loss.clst);
    get_to_if(jl, "sep", cfg.loss.sep);
    get_to_if(jl, "l1_classifier", cfg.loss.l1_classifier);
    get_to_if(jl, "l1_similarity", cfg.loss.l1_similarity);
    get_to_if(jl, "dissimilarity", cfg.loss.dissimilarity);
  }
  if (j.contains("train")) {
    const Json& jt = j.at("train");
    check_keys(jt, {"epochs_warm", "epochs_joint", "epochs_last", "push_period",
                    "batch_size", "lr_backbone", "lr_prototypes", "lr_head",
                    "prototype_norm_radius", "class_weighted_sampling"},
               "train");
    get_to_if(jt, "epochs_warm", cfg.train.epochs_warm);
    get_to_if(jt, "epochs_joint", cfg.train.epochs_joint);
    get_to_if(jt, "epochs_last", cfg.train.epochs_last);
    get_to_if(jt, "push_period", cfg.train.push_period);
    get_to_if(jt, "batch_size", cfg.train.batch_size);
    get_to_if(jt, "lr_backbone", cfg.train.lr_backbone);
    get_to_if(jt, "lr_prototypes", cfg.train.lr_prototypes);
    get_to_if(jt, "lr_head", cfg.train.lr_head);
    get_to_if(jt, "prototype_norm_radius", cfg.train.prototype_norm_radius);
    get_to_if(jt, "class_weighted_sampling", cfg.train.class_weighted_sampling);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << config_to_json(cfg).dump(2) << "\n";
}

void apply_override(Json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like dotted.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  Json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("override has an empty path segment: " + assignment);
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      if (parsed.is_discarded()) parsed = value;  // keep as string
      (*cur)[key] = parsed;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.mode != "proto-bagnet" && cfg.mode != "protopnet-baseline")
    throw ConfigError("config: unknown mode '" + cfg.mode + "'");
  if (cfg.model.classes < 2) throw ConfigError("config: need at least 2 classes");
  if (cfg.model.prototypes_per_class < 1)
    throw ConfigError("config: need at least one prototype per class");
  if (cfg.model.k < 1) throw ConfigError("config: k must be >= 1");
  if (!(cfg.model.epsilon > 0) || cfg.model.epsilon >= 1)
    throw ConfigError("config: epsilon must lie in (0,1)");
  head_kind_from(cfg.model.head);
  const RFGeometry g = compute_geometry(cfg.backbone);
  if (cfg.model.k > g.feature_rows * g.feature_cols)
    throw ConfigError("config: k exceeds the number of feature cells");
  if (cfg.data.source == "synthetic") {
    validate_synth_config(cfg.data.synth);
    if (cfg.data.synth.image_side != cfg.backbone.input_height ||
        cfg.data.synth.image_side != cfg.backbone.input_width)
      throw ConfigError("config: synthetic image side does not match backbone input");
    if (cfg.data.synth.radius_max * 2 + 1 > g.receptive_field)
      throw ConfigError("config: lesions larger than one receptive field; shrink radius_max");
    if (cfg.model.classes != 2)
      throw ConfigError("config: synthetic data is binary; set classes=2");
    if (cfg.data.n_train < 1) throw ConfigError("config: n_train must be >= 1");
  } else if (cfg.data.source == "folder") {
    if (cfg.data.manifests.empty())
      throw ConfigError("config: folder mode needs split manifests");
  } else {
    throw ConfigError("config: unknown data source '" + cfg.data.source + "'");
  }
  const LossWeights& w = cfg.loss;
  for (double v : {w.clst, w.sep, w.l1_classifier, w.l1_similarity, w.dissimilarity})
    if (!(v >= 0) || !std::isfinite(v))
      throw ConfigError("config: loss weights must be finite and >= 0");
  if (cfg.train.epochs_warm < 0 || cfg.train.epochs_joint < 0 ||
      cfg.train.epochs_last < 0)
    throw ConfigError("config: epoch counts must be >= 0");
  if (cfg.train.push_period < 1) throw ConfigError("config: push_period must be >= 1");
  if (cfg.train.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
}

}  // namespace protobag
