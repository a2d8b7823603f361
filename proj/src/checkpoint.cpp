#include "protobag/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "protobag/errors.hpp"

namespace protobag {

namespace {

constexpr const char* kMagic = "PROTOBAG-CKPT 1";

struct ArrayRef {
  std::string name;
  std::vector<long long> shape;
  std::vector<float>* data;
};

// Deterministic order; the manifest (and therefore the file bytes) depends
// only on the model shape.
std::vector<ArrayRef> array_table(Model<float>& m) {
  std::vector<ArrayRef> out;
  for (int i = 0; i < m.backbone.layer_count(); ++i) {
    auto& L = m.backbone.layer(i);
    const std::string base = "backbone.layer" + std::to_string(i);
    out.push_back({base + ".weight",
                   {L.spec.out_channels, L.cin, L.spec.kernel, L.spec.kernel},
                   &L.w});
    out.push_back({base + ".bias", {L.spec.out_channels}, &L.b});
    if (L.spec.norm) {
      out.push_back({base + ".running_mean", {L.spec.out_channels}, &L.run_mean});
      out.push_back({base + ".running_var", {L.spec.out_channels}, &L.run_var});
    }
  }
  out.push_back({"prototypes.vectors", {m.bank.count(), m.bank.dim},
                 &m.bank.vectors});
  if (m.head.kind == HeadKind::dense)
    out.push_back({"head.weight", {m.head.classes, m.head.prototypes}, &m.head.w});
  else
    out.push_back({"head.weight", {m.head.prototypes}, &m.head.w});
  out.push_back({"input.mean", {(long long)m.input_mean.size()}, &m.input_mean});
  out.push_back({"input.std", {(long long)m.input_std.size()}, &m.input_std});
  return out;
}

Json provenance_to_json(const PrototypeBank<float>& bank) {
  Json arr = Json::array();
  for (const Provenance& p : bank.provenance) {
    Json jp;
    jp["valid"] = p.valid;
    jp["sample_index"] = p.sample_index;
    jp["sample_id"] = p.sample_id;
    jp["cell_row"] = p.cell_row;
    jp["cell_col"] = p.cell_col;
    jp["box"] = {p.box.row0, p.box.col0, p.box.row1, p.box.col1};
    jp["distance"] = p.distance;
    jp["similarity"] = p.similarity;
    arr.push_back(jp);
  }
  return arr;
}

void provenance_from_json(const Json& arr, PrototypeBank<float>& bank) {
  if (!arr.is_array() || int(arr.size()) != bank.count())
    throw DataError("checkpoint: provenance count mismatch");
  for (int j = 0; j < bank.count(); ++j) {
    const Json& jp = arr[std::size_t(j)];
    Provenance& p = bank.provenance[std::size_t(j)];
    p.valid = jp.at("valid").get<bool>();
    p.sample_index = jp.at("sample_index").get<long long>();
    p.sample_id = jp.at("sample_id").get<std::string>();
    p.cell_row = jp.at("cell_row").get<int>();
    p.cell_col = jp.at("cell_col").get<int>();
    const auto& b = jp.at("box");
    p.box = Box{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                b.at(3).get<int>()};
    p.distance = jp.at("distance").get<double>();
    p.similarity = jp.at("similarity").get<double>();
  }
}

}  // namespace

Model<float> build_model(const ExperimentConfig& cfg) {
  validate_config(cfg);
  Model<float> m;
  m.backbone_config = cfg.backbone;
  m.backbone = Backbone<float>(cfg.backbone, cfg.seed);
  m.bank = init_prototypes<float>(cfg.model.prototypes_per_class,
                                  cfg.model.classes,
                                  m.backbone.feature_depth(), cfg.seed);
  m.head = head_kind_from(cfg.model.head) == HeadKind::dense
               ? Head<float>::dense_head(cfg.model.classes,
                                         cfg.model.prototypes_per_class)
               : Head<float>::soft_aggregation_head(
                     cfg.model.classes, cfg.model.prototypes_per_class);
  m.epsilon = cfg.model.epsilon;
  m.k = cfg.model.k;
  m.input_mean.assign(std::size_t(cfg.backbone.in_channels), 0.0f);
  m.input_std.assign(std::size_t(cfg.backbone.in_channels), 1.0f);
  return m;
}

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const ExperimentConfig& cfg) {
  Model<float>& m = const_cast<Model<float>&>(model);  // table needs pointers
  std::vector<ArrayRef> table = array_table(m);

  Json meta;
  meta["version"] = 1;
  meta["config"] = config_to_json(cfg);
  const RFGeometry& g = m.geometry();
  meta["geometry"] = {
      {"receptive_field", g.receptive_field}, {"total_stride", g.total_stride},
      {"total_padding", g.total_padding},     {"feature_rows", g.feature_rows},
      {"feature_cols", g.feature_cols},       {"input_height", g.input_height},
      {"input_width", g.input_width}};
  meta["provenance"] = provenance_to_json(m.bank);
  const std::string meta_text = meta.dump();

  std::ostringstream manifest;
  long long offset = 0;
  for (const ArrayRef& a : table) {
    manifest << a.name << " f32 " << a.shape.size();
    long long n = 1;
    for (long long d : a.shape) {
      manifest << " " << d;
      n *= d;
    }
    if (std::size_t(n) != a.data->size())
      throw DataError("checkpoint: shape mismatch for " + a.name);
    manifest << " " << offset << "\n";
    offset += n * (long long)sizeof(float);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << kMagic << "\n";
  out << "META " << meta_text.size() << "\n" << meta_text << "\n";
  out << "ARRAYS " << table.size() << "\n" << manifest.str();
  out << "DATA " << offset << "\n";
  for (const ArrayRef& a : table)
    out.write(reinterpret_cast<const char*>(a.data->data()),
              (std::streamsize)(a.data->size() * sizeof(float)));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw DataError("checkpoint: bad magic in " + path);
  if (!std::getline(in, line) || line.rfind("META ", 0) != 0)
    throw DataError("checkpoint: missing META section");
  const std::size_t meta_len = std::stoull(line.substr(5));
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), (std::streamsize)meta_len);
  in.ignore(1);  // trailing newline
  Json meta;
  try {
    meta = Json::parse(meta_text);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint: meta parse error: ") + e.what());
  }
  if (meta.at("version").get<int>() != 1)
    throw DataError("checkpoint: unsupported version");

  LoadedCheckpoint lc;
  lc.config = config_from_json(meta.at("config"));
  lc.model = build_model(lc.config);
  provenance_from_json(meta.at("provenance"), lc.model.bank);

  if (!std::getline(in, line) || line.rfind("ARRAYS ", 0) != 0)
    throw DataError("checkpoint: missing ARRAYS section");
  const int count = std::stoi(line.substr(7));
  struct Entry {
    std::string name;
    long long elems = 0, offset = 0;
  };
  std::vector<Entry> entries;
  for (int i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw DataError("checkpoint: truncated manifest");
    std::istringstream ls(line);
    Entry e;
    std::string dtype;
    int ndim = 0;
    ls >> e.name >> dtype >> ndim;
    long long n = 1;
    for (int d = 0; d < ndim; ++d) {
      long long dim;
      ls >> dim;
      n *= dim;
    }
    ls >> e.offset;
    if (!ls || dtype != "f32")
      throw DataError("checkpoint: bad manifest line: " + line);
    e.elems = n;
    entries.push_back(e);
  }
  if (!std::getline(in, line) || line.rfind("DATA ", 0) != 0)
    throw DataError("checkpoint: missing DATA section");
  const std::streampos data_start = in.tellg();

  std::vector<ArrayRef> table = array_table(lc.model);
  if (table.size() != entries.size())
    throw DataError("checkpoint: array count does not match the config");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].name != entries[i].name)
      throw DataError("checkpoint: unexpected array " + entries[i].name);
    if ((long long)table[i].data->size() != entries[i].elems)
      throw DataError("checkpoint: size mismatch for " + entries[i].name);
    in.seekg(data_start + std::streampos(entries[i].offset));
    in.read(reinterpret_cast<char*>(table[i].data->data()),
            (std::streamsize)(entries[i].elems * (long long)sizeof(float)));
    if (!in) throw DataError("checkpoint: truncated data for " + entries[i].name);
  }
  return lc;
}

}  // namespace protobag
