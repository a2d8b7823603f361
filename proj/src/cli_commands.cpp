#include "protobag/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "protobag/checkpoint.hpp"
#include "protobag/config.hpp"
#include "protobag/data.hpp"
#include "protobag/errors.hpp"
#include "protobag/evalx.hpp"
#include "protobag/explain.hpp"
#include "protobag/imageio.hpp"
#include "protobag/trainer.hpp"
#include "protobag/util.hpp"

namespace protobag {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long long seed = -1;
  int threads = -1;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON config file");
  cmd->add_option("--set", args.overrides,
                  "override a config value, dotted.path=value (repeatable)");
  cmd->add_option("-o,--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "experiment seed");
  cmd->add_option("--threads", args.threads, "worker threads (0 = auto)");
  cmd->add_flag("--deterministic", args.deterministic,
                "single-threaded numeric paths, bit-stable runs");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  Json j;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw ConfigError("cannot open config file " + args.config_path);
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("config parse error in " + args.config_path + ": " +
                        e.what());
    }
  } else {
    j = Json::object();
  }
  for (const std::string& ov : args.overrides) apply_override(j, ov);
  ExperimentConfig cfg = config_from_json(j);
  if (args.seed >= 0) {
    const bool synth_seed_explicit =
        j.contains("data") && j["data"].contains("synth") &&
        j["data"]["synth"].contains("seed");
    cfg.seed = std::uint64_t(args.seed);
    if (!synth_seed_explicit) cfg.data.synth.seed = cfg.seed;
  }
  if (args.threads >= 0) cfg.threads = args.threads;
  if (args.deterministic) cfg.deterministic = true;
  if (!args.out_dir.empty()) {
    cfg.out_dir = args.out_dir;
  } else if (cfg.out_dir == "out") {
    if (const char* env = std::getenv("PROTOBAG_OUT")) cfg.out_dir = env;
  }
  validate_config(cfg);
  return cfg;
}

int effective_threads(const ExperimentConfig& cfg) {
  return cfg.deterministic ? 1 : resolve_threads(cfg.threads);
}

struct Splits {
  Dataset train, val, test;
};

Splits load_splits(const ExperimentConfig& cfg) {
  Splits s;
  const int threads = effective_threads(cfg);
  if (cfg.data.source == "synthetic") {
    const long long n =
        cfg.data.n_train + cfg.data.n_val + cfg.data.n_test;
    Dataset all = generate_synthetic_dataset(cfg.data.synth, n, threads);
    auto take = [&](long long from, long long count) {
      return Dataset(all.begin() + from, all.begin() + from + count);
    };
    s.train = take(0, cfg.data.n_train);
    s.val = take(cfg.data.n_train, cfg.data.n_val);
    s.test = take(cfg.data.n_train + cfg.data.n_val, cfg.data.n_test);
    return s;
  }
  const auto splits =
      load_image_folder(cfg.data.root, cfg.data.manifests,
                        cfg.backbone.input_height);
  auto grab = [&](const char* name, Dataset& dst) {
    auto it = splits.find(name);
    if (it != splits.end()) dst = it->second;
  };
  grab("train", s.train);
  grab("val", s.val);
  grab("test", s.test);
  if (s.train.empty()) throw DataError("folder mode: no 'train' split loaded");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void snapshot_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  save_config(cfg, (fs::path(cfg.out_dir) / "config.json").string());
}

int cmd_generate(const ExperimentConfig& cfg) {
  if (cfg.data.source != "synthetic")
    throw ConfigError("generate: data source must be synthetic");
  snapshot_config(cfg);
  const Splits s = load_splits(cfg);
  const std::string dir = (fs::path(cfg.out_dir) / "data").string();
  export_dataset(s.train, dir, "train");
  export_dataset(s.val, dir, "val");
  export_dataset(s.test, dir, "test");
  std::cout << "wrote " << s.train.size() << "/" << s.val.size() << "/"
            << s.test.size() << " train/val/test images under " << dir << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
  snapshot_config(cfg);
  const Splits s = load_splits(cfg);
  TrainResult result = train(cfg, s.train, s.val);
  const fs::path out(cfg.out_dir);
  write_text(out / "metrics.csv", metrics_csv(result.log));
  std::string push_log;
  for (std::size_t i = 0; i < result.pushes.size(); ++i)
    push_log += "push " + std::to_string(i + 1) + "\n" +
                result.pushes[i].to_text();
  write_text(out / "push_log.txt", push_log);
  save_checkpoint((out / "checkpoint.pbck").string(), result.model, cfg);
  if (!s.test.empty()) {
    const EvalResult ev =
        evaluate_classification(result.model, s.test, effective_threads(cfg));
    std::cout << "test accuracy " << ev.accuracy << " auc " << ev.auc
              << " recall " << ev.recall << " precision " << ev.precision
              << "\n";
  }
  std::cout << "checkpoint written to " << (out / "checkpoint.pbck").string()
            << "\n";
  return 0;
}

struct ExplainArgs {
  std::string checkpoint;
  std::string image_path;
  std::string sample;  // split:index into the configured dataset
  std::string method = "both";
  double quantile = 0.95;
  bool global = false;
};

ImageF load_explain_image(const ExperimentConfig& cfg, const ExplainArgs& args,
                          std::string& sample_id) {
  if (!args.image_path.empty()) {
    sample_id = fs::path(args.image_path).stem().string();
    return resize_bilinear(read_png_gray(args.image_path),
                           cfg.backbone.input_height, cfg.backbone.input_width);
  }
  std::string split = "test";
  long long index = 0;
  const std::size_t colon = args.sample.find(':');
  if (colon == std::string::npos) {
    index = std::stoll(args.sample);
  } else {
    split = args.sample.substr(0, colon);
    index = std::stoll(args.sample.substr(colon + 1));
  }
  const Splits s = load_splits(cfg);
  const Dataset* d = split == "train" ? &s.train
                     : split == "val" ? &s.val
                                      : &s.test;
  if (index < 0 || index >= (long long)d->size())
    throw InputError("sample index out of range for split " + split);
  sample_id = (*d)[std::size_t(index)].id;
  return (*d)[std::size_t(index)].image;
}

int cmd_explain(const CommonArgs& common, const ExplainArgs& args) {
  const LoadedCheckpoint lc = load_checkpoint(args.checkpoint);
  ExperimentConfig cfg = lc.config;
  if (!common.out_dir.empty()) cfg.out_dir = common.out_dir;
  if (common.threads >= 0) cfg.threads = common.threads;
  if (common.deterministic) cfg.deterministic = true;
  const Model<float>& model = lc.model;

  if (args.global) {
    bool pushed = false;
    for (const Provenance& p : model.bank.provenance) pushed |= p.valid;
    if (!pushed)
      throw DataError(
          "checkpoint holds no push provenance; train with joint epochs first");
    const Splits s = load_splits(cfg);
    const auto patches = global_explanation(model, s.train);
    const fs::path dir = fs::path(cfg.out_dir) / "prototypes";
    fs::create_directories(dir);
    Json meta = Json::array();
    for (const PrototypePatch& pp : patches) {
      const std::string name = "proto" + std::to_string(pp.prototype) + ".png";
      write_png_gray((dir / name).string(), pp.patch);
      Json jp;
      jp["prototype"] = pp.prototype;
      jp["class"] = pp.cls;
      jp["file"] = name;
      jp["sample_id"] = pp.prov.sample_id;
      jp["cell"] = {pp.prov.cell_row, pp.prov.cell_col};
      jp["box"] = {pp.prov.box.row0, pp.prov.box.col0, pp.prov.box.row1,
                   pp.prov.box.col1};
      jp["distance"] = pp.prov.distance;
      jp["similarity"] = pp.prov.similarity;
      meta.push_back(jp);
    }
    write_text(dir / "prototypes.json", meta.dump(2) + "\n");
    std::cout << "wrote " << patches.size() << " prototype tiles to "
              << dir.string() << "\n";
    return 0;
  }

  if (args.image_path.empty() && args.sample.empty())
    throw ConfigError("explain: pass --image, --sample, or --global");
  std::string sample_id;
  const ImageF raw = load_explain_image(cfg, args, sample_id);
  const fs::path dir = fs::path(cfg.out_dir) / "explain" / sample_id;
  fs::create_directories(dir);

  const bool want_rf = args.method == "rf-box" || args.method == "both";
  const bool want_pct = args.method == "percentile-box" || args.method == "both";
  if (!want_rf && !want_pct)
    throw ConfigError("explain: method must be rf-box, percentile-box, or both");

  const Inference<float> inf = model.infer_raw(raw);
  const double vmax = std::log(1.0 / model.epsilon);
  if (want_rf) {
    const ExplanationReport rep = local_explanation(model, raw, sample_id);
    write_text(dir / "rf_box.json", explanation_to_json(rep).dump(2) + "\n");
    for (const PrototypeExplanation& pe : rep.prototypes) {
      std::vector<Box> boxes;
      for (const PartEntry& e : pe.parts) boxes.push_back(e.box);
      const auto rgb = render_boxes(raw, boxes);
      write_png_rgb((dir / ("proto" + std::to_string(pe.prototype) +
                            "_rf_boxes.png"))
                        .string(),
                    rgb, raw.height, raw.width);
      const float* map = inf.similarities.map(pe.prototype);
      const std::vector<float> m(map, map + inf.similarities.cells());
      const auto heat = render_overlay(raw, m, inf.similarities.rows,
                                       inf.similarities.cols, vmax);
      write_png_rgb((dir / ("proto" + std::to_string(pe.prototype) +
                            "_overlay.png"))
                        .string(),
                    heat, raw.height, raw.width);
    }
  }
  if (want_pct) {
    const ExplanationReport rep =
        percentile_explanation(model, raw, sample_id, args.quantile);
    write_text(dir / "percentile_box.json",
               explanation_to_json(rep).dump(2) + "\n");
    for (const PrototypeExplanation& pe : rep.prototypes) {
      const auto rgb = render_boxes(raw, {pe.parts.front().box});
      write_png_rgb((dir / ("proto" + std::to_string(pe.prototype) +
                            "_percentile_box.png"))
                        .string(),
                    rgb, raw.height, raw.width);
    }
    for (const std::string& w : rep.warnings)
      std::cerr << "warning: " << w << "\n";
  }
  std::cout << "explanation written to " << dir.string() << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string suite = "all";
  double fill = 0.0;
  bool fill_original = false;
  bool mask_hits = false;
};

int cmd_evaluate(const CommonArgs& common, const EvaluateArgs& args) {
  const LoadedCheckpoint lc = load_checkpoint(args.checkpoint);
  ExperimentConfig cfg = lc.config;
  if (!common.out_dir.empty()) cfg.out_dir = common.out_dir;
  if (common.threads >= 0) cfg.threads = common.threads;
  if (common.deterministic) cfg.deterministic = true;
  const Model<float>& model = lc.model;
  const int threads = effective_threads(cfg);

  const bool all = args.suite == "all";
  if (!all && args.suite != "classification" && args.suite != "localization" &&
      args.suite != "faithfulness" && args.suite != "importance")
    throw ConfigError("evaluate: unknown suite '" + args.suite + "'");

  const Splits s = load_splits(cfg);
  const Dataset& test = s.test.empty() ? s.train : s.test;
  const fs::path dir = fs::path(cfg.out_dir) / "eval";
  fs::create_directories(dir);

  if (all || args.suite == "classification") {
    const EvalResult ev = evaluate_classification(model, test, threads);
    std::ostringstream os;
    os << "accuracy,auc,recall,precision\n"
       << ev.accuracy << "," << ev.auc << "," << ev.recall << ","
       << ev.precision << "\n";
    write_text(dir / "classification.csv", os.str());
    std::cout << "classification: accuracy " << ev.accuracy << " auc " << ev.auc
              << "\n";
  }
  if (all || args.suite == "localization") {
    const LocalizationResult lr = localization_precision(
        model, test, model.k, args.mask_hits, threads);
    Json j;
    j["images"] = lr.images;
    j["parts_at_k"] = lr.parts;
    j["precision_at"] = lr.precision_at;
    j["mean_at_k"] = lr.mean_at_k;
    j["sd_at_k"] = lr.sd_at_k;
    write_text(dir / "localization.json", j.dump(2) + "\n");
    std::cout << "localization: precision@" << model.k << " " << lr.mean_at_k
              << " +- " << lr.sd_at_k << "\n";
  }
  if (all || args.suite == "faithfulness") {
    const FaithfulnessResult fr = occlusion_faithfulness(
        model, test, args.fill, args.fill_original, threads);
    Json j;
    j["auc_original"] = fr.auc_orig;
    j["auc_occluded"] = fr.auc_occl;
    j["mean_prob_original"] = fr.mean_prob_orig;
    j["sd_prob_original"] = fr.sd_prob_orig;
    j["mean_prob_occluded"] = fr.mean_prob_occl;
    j["sd_prob_occluded"] = fr.sd_prob_occl;
    write_text(dir / "faithfulness.json", j.dump(2) + "\n");
    std::cout << "faithfulness: auc " << fr.auc_orig << " -> " << fr.auc_occl
              << "\n";
  }
  if (all || args.suite == "importance") {
    Json j = Json::array();
    for (int cls = 0; cls < model.head.classes; ++cls) {
      const ImportanceResult ir =
          class_importance(model, test, cls, args.fill, threads);
      Json jc;
      jc["class"] = cls;
      jc["mean_delta_by_true_class"] = ir.mean_by_class;
      jc["sd_delta_by_true_class"] = ir.sd_by_class;
      j.push_back(jc);
      std::cout << "importance of class-" << cls << " prototypes: delta "
                << ir.mean_by_class[std::size_t(cls)] << " +- "
                << ir.sd_by_class[std::size_t(cls)] << " on true-class-" << cls
                << " samples\n";
    }
    write_text(dir / "importance.json", j.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"prototype-evidence image classifier"};
  app.require_subcommand(1);

  CommonArgs gen_common, train_common, explain_common, eval_common;
  ExplainArgs explain_args;
  EvaluateArgs eval_args;

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, gen_common);
  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_common);
  CLI::App* ex = app.add_subcommand("explain", "explain predictions");
  add_common(ex, explain_common);
  ex->add_option("--checkpoint", explain_args.checkpoint, "checkpoint file")
      ->required();
  ex->add_option("--image", explain_args.image_path, "PNG image to explain");
  ex->add_option("--sample", explain_args.sample,
                 "dataset sample, split:index (e.g. test:3)");
  ex->add_option("--method", explain_args.method,
                 "rf-box | percentile-box | both");
  ex->add_option("--quantile", explain_args.quantile,
                 "percentile-box threshold quantile");
  ex->add_flag("--global", explain_args.global,
               "emit the learned prototype tiles instead");
  CLI::App* ev = app.add_subcommand("evaluate", "run evaluation suites");
  add_common(ev, eval_common);
  ev->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")
      ->required();
  ev->add_option("--suite", eval_args.suite,
                 "classification | localization | faithfulness | importance | all");
  ev->add_option("--fill", eval_args.fill,
                 "occlusion fill value in normalized space");
  ev->add_flag("--fill-original", eval_args.fill_original,
               "no-op occlusion that keeps original pixels (plumbing check)");
  ev->add_flag("--mask-hits", eval_args.mask_hits,
               "count localization hits by mask intersection, not markers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(resolve_config(gen_common));
    if (tr->parsed()) return cmd_train(resolve_config(train_common));
    if (ex->parsed()) return cmd_explain(explain_common, explain_args);
    if (ev->parsed()) return cmd_evaluate(eval_common, eval_args);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace protobag
