#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "protobag/checkpoint.hpp"
#include "protobag/errors.hpp"
#include "protobag/rng.hpp"

using namespace protobag;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = default_config("proto-bagnet");
  cfg.backbone_preset = "custom";
  cfg.backbone.in_channels = 1;
  cfg.backbone.input_height = 32;
  cfg.backbone.input_width = 32;
  cfg.backbone.layers = {{3, 1, 4, 0, true, true}, {3, 2, 6, 0, true, false}};
  cfg.model.prototypes_per_class = 2;
  cfg.model.k = 3;
  cfg.seed = 5;
  cfg.data.synth.image_side = 32;
  cfg.data.synth.band_amplitude = 4.0;
  cfg.data.synth.band_thickness = 6.0;
  cfg.data.synth.radius_min = 2.0;
  cfg.data.synth.radius_max = 2.0;  // 2r+1 fits the 5-pixel receptive field
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Model<float> dirty_model() {
  Model<float> m = build_model(tiny_config());
  Rng rng(91);
  for (auto& x : m.bank.vectors) x = float(rng.uniform(-1.0, 1.0));
  for (auto& x : m.head.w) x = float(rng.uniform(-1.0, 1.0));
  for (auto& x : m.backbone.layer(0).run_mean) x = float(rng.uniform(-1.0, 1.0));
  for (auto& x : m.backbone.layer(0).run_var) x = float(rng.uniform(0.5, 2.0));
  m.input_mean = {0.41f};
  m.input_std = {0.23f};
  Provenance p;
  p.valid = true;
  p.sample_index = 12;
  p.sample_id = "synth-000012";
  p.cell_row = 1;
  p.cell_col = 2;
  p.box = Box{4, 8, 15, 16};
  p.distance = 0.125;
  p.similarity = 2.0;
  m.bank.provenance[1] = p;
  return m;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves the whole model") {
  testutil::TempDir tmp;
  const ExperimentConfig cfg = tiny_config();
  const Model<float> m = dirty_model();

  const std::string path = tmp.file("model.pbck");
  save_checkpoint(path, m, cfg);
  const LoadedCheckpoint lc = load_checkpoint(path);

  // config survives
  CHECK(config_to_json(lc.config).dump() == config_to_json(cfg).dump());

  // every parameter array is bit-identical
  REQUIRE(lc.model.backbone.layer_count() == m.backbone.layer_count());
  for (int li = 0; li < m.backbone.layer_count(); ++li) {
    CHECK(lc.model.backbone.layer(li).w == m.backbone.layer(li).w);
    CHECK(lc.model.backbone.layer(li).b == m.backbone.layer(li).b);
    CHECK(lc.model.backbone.layer(li).run_mean == m.backbone.layer(li).run_mean);
    CHECK(lc.model.backbone.layer(li).run_var == m.backbone.layer(li).run_var);
  }
  CHECK(lc.model.bank.vectors == m.bank.vectors);
  CHECK(lc.model.head.w == m.head.w);
  CHECK(lc.model.head.kind == m.head.kind);
  CHECK(lc.model.epsilon == m.epsilon);
  CHECK(lc.model.k == m.k);
  CHECK(lc.model.input_mean == m.input_mean);
  CHECK(lc.model.input_std == m.input_std);

  // provenance fields survive
  const Provenance& p = lc.model.bank.provenance[1];
  CHECK(p.valid);
  CHECK(p.sample_index == 12);
  CHECK(p.sample_id == "synth-000012");
  CHECK(p.cell_row == 1);
  CHECK(p.cell_col == 2);
  CHECK(p.box == (Box{4, 8, 15, 16}));
  CHECK(p.distance == 0.125);
  CHECK(p.similarity == 2.0);
  CHECK_FALSE(lc.model.bank.provenance[0].valid);

  // inference is bit-identical through the round trip
  Rng rng(7);
  const ImageF img = testutil::random_image<float>(1, 32, 32, rng, 0.0, 1.0);
  const Inference<float> a = m.infer_raw(img);
  const Inference<float> b = lc.model.infer_raw(img);
  CHECK(a.logits == b.logits);
  CHECK(a.pooled == b.pooled);
  CHECK(a.predicted == b.predicted);
}

TEST_CASE("save load save is byte stable") {
  testutil::TempDir tmp;
  const ExperimentConfig cfg = tiny_config();
  const Model<float> m = dirty_model();

  const std::string p1 = tmp.file("a.pbck");
  const std::string p2 = tmp.file("b.pbck");
  save_checkpoint(p1, m, cfg);
  const LoadedCheckpoint lc = load_checkpoint(p1);
  save_checkpoint(p2, lc.model, lc.config);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corrupted checkpoints are rejected") {
  testutil::TempDir tmp;
  const std::string path = tmp.file("model.pbck");
  save_checkpoint(path, dirty_model(), tiny_config());

  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.pbck")), DataError);

  // wrong magic
  std::string bytes = slurp(path);
  std::string evil = bytes;
  evil[0] = 'X';
  {
    std::ofstream out(tmp.file("magic.pbck"), std::ios::binary);
    out << evil;
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("magic.pbck")), DataError);

  // truncated payload
  {
    std::ofstream out(tmp.file("trunc.pbck"), std::ios::binary);
    out << bytes.substr(0, bytes.size() - 64);
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("trunc.pbck")), DataError);
}

TEST_CASE("build_model honors the config") {
  const ExperimentConfig cfg = tiny_config();
  const Model<float> m = build_model(cfg);
  CHECK(m.bank.per_class == 2);
  CHECK(m.bank.classes == 2);
  CHECK(m.bank.dim == 6);  // last layer channels
  CHECK(m.k == 3);
  CHECK(m.head.kind == HeadKind::soft_aggregation);
  CHECK(m.geometry().feature_rows == compute_geometry(cfg.backbone).feature_rows);
  // fresh stats are identity
  CHECK(m.input_mean == std::vector<float>{0.0f});
  CHECK(m.input_std == std::vector<float>{1.0f});

  ExperimentConfig dense = tiny_config();
  dense.mode = "protopnet-baseline";
  dense.model.head = "dense";
  dense.model.k = 1;
  const Model<float> dm = build_model(dense);
  CHECK(dm.head.kind == HeadKind::dense);
  CHECK(int(dm.head.w.size()) == 2 * 4);
}
