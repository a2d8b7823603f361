#include "protobag/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "protobag/errors.hpp"
#include "protobag/imageio.hpp"
#include "protobag/rng.hpp"
#include "protobag/util.hpp"

namespace protobag {

namespace fs = std::filesystem;

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.image_side < 32) throw ConfigError("synth: image side must be >= 32");
  if (cfg.band_thickness <= 0) throw ConfigError("synth: band thickness must be positive");
  if (cfg.band_amplitude < 0) throw ConfigError("synth: band amplitude must be >= 0");
  const double center =
      cfg.band_center < 0 ? cfg.image_side / 2.0 : cfg.band_center;
  const double reach = cfg.band_amplitude + cfg.band_thickness / 2.0 +
                       cfg.radius_max + 2.0;
  if (center - reach < 0 || center + reach >= cfg.image_side)
    throw ConfigError("synth: band leaves the image for the configured geometry");
  if (cfg.lesion_min < 0 || cfg.lesion_max < cfg.lesion_min)
    throw ConfigError("synth: bad lesion count range");
  if (cfg.radius_min < 1 || cfg.radius_max < cfg.radius_min)
    throw ConfigError("synth: bad bump radius range");
  if (cfg.contrast <= 0) throw ConfigError("synth: contrast must be positive");
  if (cfg.noise < 0) throw ConfigError("synth: noise must be >= 0");
  if (cfg.balance < 0 || cfg.balance > 1)
    throw ConfigError("synth: balance must lie in [0,1]");
}

int synth_label(const SynthConfig& cfg, long long index) {
  if (cfg.lesion_max == 0) return 0;
  const long long a = (long long)std::floor(double(index + 1) * cfg.balance);
  const long long b = (long long)std::floor(double(index) * cfg.balance);
  return int(a - b);
}

LabeledSample generate_sample(const SynthConfig& cfg, long long index) {
  validate_synth_config(cfg);
  const int side = cfg.image_side;
  Rng rng = Rng::stream(cfg.seed, std::uint64_t(index));
  LabeledSample s;
  s.label = synth_label(cfg, index);
  {
    std::ostringstream os;
    os << "synth-" << std::setw(6) << std::setfill('0') << index;
    s.id = os.str();
  }
  s.group = s.id;  // one synthetic "patient" per image
  s.image = ImageF(1, side, side);

  // band midline: a sinusoid with per-sample phase, frequency and tilt
  const double center0 =
      (cfg.band_center < 0 ? side / 2.0 : cfg.band_center) + rng.uniform(-2.0, 2.0);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double cycles = rng.uniform(0.7, 1.6);
  const double tilt = rng.uniform(-0.02, 0.02);
  std::vector<double> mid((std::size_t)side);
  for (int x = 0; x < side; ++x)
    mid[std::size_t(x)] = center0 +
                          cfg.band_amplitude *
                              std::sin(2.0 * M_PI * cycles * x / side + phase) +
                          tilt * (x - side / 2.0);

  // textured background: two low-frequency waves plus pixel noise
  const double bg_fy = rng.uniform(1.0, 3.0), bg_fx = rng.uniform(1.0, 3.0);
  const double bg_py = rng.uniform(0.0, 2.0 * M_PI), bg_px = rng.uniform(0.0, 2.0 * M_PI);
  const double half = cfg.band_thickness / 2.0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double v = cfg.background +
                 0.03 * std::sin(2.0 * M_PI * bg_fy * y / side + bg_py) +
                 0.03 * std::sin(2.0 * M_PI * bg_fx * x / side + bg_px);
      const double d = std::abs(y - mid[std::size_t(x)]);
      if (d <= half) {
        v = cfg.band_level;
      } else if (d <= half + 2.0) {  // soft rim, 2 px
        const double t = (d - half) / 2.0;
        v = cfg.band_level * (1.0 - t) + v * t;
      }
      v += cfg.noise * rng.normal();
      s.image.at(0, y, x) = float(std::clamp(v, 0.0, 1.0));
    }
  }

  if (s.label == 0) return s;

  s.mask = Image<std::uint8_t>(1, side, side);
  const int want = std::max(1, cfg.lesion_min) == cfg.lesion_max
                       ? cfg.lesion_max
                       : rng.range(std::max(1, cfg.lesion_min), cfg.lesion_max);
  const double min_sep = 2.0 * cfg.radius_max + 3.0;
  std::vector<std::pair<double, double>> centers;
  const double margin = cfg.radius_max + 2.0;
  for (int li = 0; li < want; ++li) {
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const double cx = rng.uniform(margin, side - margin);
      const double cy = mid[std::size_t(std::clamp(int(cx), 0, side - 1))] +
                        rng.uniform(-half / 2.0, half / 2.0);
      bool ok = true;
      for (const auto& c : centers) {
        const double dx = c.second - cx, dy = c.first - cy;
        if (std::sqrt(dx * dx + dy * dy) < min_sep) { ok = false; break; }
      }
      if (!ok) continue;
      centers.push_back({cy, cx});
      placed = true;
      const double R = rng.uniform(cfg.radius_min, cfg.radius_max);
      const int y0 = std::max(0, int(std::floor(cy - R)));
      const int y1 = std::min(side - 1, int(std::ceil(cy + R)));
      const int x0 = std::max(0, int(std::floor(cx - R)));
      const int x1 = std::min(side - 1, int(std::ceil(cx + R)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dy = y - cy, dx = x - cx;
          const double d2 = (dy * dy + dx * dx) / (R * R);
          if (d2 > 1.0) continue;
          // rim elevation = contrast, center = 1.5x; disk mean 1.25x
          const double elev = cfg.contrast * (1.5 - 0.5 * d2);
          s.image.at(0, y, x) =
              float(std::clamp(double(s.image.at(0, y, x)) + elev, 0.0, 1.0));
          s.mask.at(0, y, x) = 1;
        }
      }
    }
  }
  // first placement cannot collide, so the mask is never empty for label 1
  s.markers = mask_centroids(s.mask);
  return s;
}

Dataset generate_synthetic_dataset(const SynthConfig& cfg, long long n,
                                   int threads) {
  if (n < 1) throw InputError("synth: dataset size must be >= 1");
  validate_synth_config(cfg);
  Dataset data((std::size_t(n)));
  parallel_for(int(n), threads,
               [&](int i) { data[std::size_t(i)] = generate_sample(cfg, i); });
  return data;
}

std::vector<std::pair<int, int>> mask_centroids(const Image<std::uint8_t>& mask) {
  std::vector<std::pair<int, int>> out;
  if (mask.v.empty()) return out;
  const int h = mask.height, w = mask.width;
  std::vector<int> comp(std::size_t(h) * w, -1);
  int ncomp = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(0, y, x) || comp[std::size_t(y) * w + x] >= 0) continue;
      // BFS flood fill
      std::deque<std::pair<int, int>> q{{y, x}};
      comp[std::size_t(y) * w + x] = ncomp;
      long long sy = 0, sx = 0, cnt = 0;
      std::vector<std::pair<int, int>> pixels;
      while (!q.empty()) {
        auto [py, px] = q.front();
        q.pop_front();
        pixels.push_back({py, px});
        sy += py;
        sx += px;
        ++cnt;
        const int ny[4] = {py - 1, py + 1, py, py};
        const int nx[4] = {px, px, px - 1, px + 1};
        for (int t = 0; t < 4; ++t) {
          if (ny[t] < 0 || ny[t] >= h || nx[t] < 0 || nx[t] >= w) continue;
          if (!mask.at(0, ny[t], nx[t])) continue;
          int& c = comp[std::size_t(ny[t]) * w + nx[t]];
          if (c >= 0) continue;
          c = ncomp;
          q.push_back({ny[t], nx[t]});
        }
      }
      ++ncomp;
      const double cy = double(sy) / double(cnt), cx = double(sx) / double(cnt);
      // snap the centroid to the nearest pixel of this component
      std::pair<int, int> best = pixels.front();
      double bd = 1e300;
      for (const auto& p : pixels) {
        const double d = (p.first - cy) * (p.first - cy) +
                         (p.second - cx) * (p.second - cx);
        if (d < bd) { bd = d; best = p; }
      }
      out.push_back(best);
    }
  }
  return out;
}

void dataset_mean_std(const Dataset& data, std::vector<float>& mean,
                      std::vector<float>& stddev) {
  if (data.empty()) throw InputError("statistics over empty dataset");
  const int c = data.front().image.channels;
  std::vector<double> sum(std::size_t(c), 0.0), sq(std::size_t(c), 0.0);
  long long count = 0;
  for (const LabeledSample& s : data) {
    if (s.image.channels != c) throw InputError("mixed channel counts in dataset");
    const std::size_t plane = std::size_t(s.image.height) * s.image.width;
    for (int ch = 0; ch < c; ++ch) {
      const float* p = s.image.v.data() + std::size_t(ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum[std::size_t(ch)] += p[i];
        sq[std::size_t(ch)] += double(p[i]) * p[i];
      }
    }
    count += (long long)plane;
  }
  mean.resize(std::size_t(c));
  stddev.resize(std::size_t(c));
  for (int ch = 0; ch < c; ++ch) {
    const double m = sum[std::size_t(ch)] / double(count);
    const double var = std::max(0.0, sq[std::size_t(ch)] / double(count) - m * m);
    mean[std::size_t(ch)] = float(m);
    stddev[std::size_t(ch)] = float(std::sqrt(var));
  }
}

ImageF normalize_image(const ImageF& img, const std::vector<float>& mean,
                       const std::vector<float>& stddev) {
  if (int(mean.size()) != img.channels || int(stddev.size()) != img.channels)
    throw InputError("normalize: statistics channel count mismatch");
  for (float s : stddev)
    if (!(s > 0)) throw InputError("normalize: std must be positive");
  ImageF out = img;
  const std::size_t plane = std::size_t(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    float* p = out.v.data() + std::size_t(c) * plane;
    for (std::size_t i = 0; i < plane; ++i)
      p[i] = (p[i] - mean[std::size_t(c)]) / stddev[std::size_t(c)];
  }
  return out;
}

ImageF denormalize_image(const ImageF& img, const std::vector<float>& mean,
                         const std::vector<float>& stddev) {
  if (int(mean.size()) != img.channels || int(stddev.size()) != img.channels)
    throw InputError("denormalize: statistics channel count mismatch");
  ImageF out = img;
  const std::size_t plane = std::size_t(img.height) * img.width;
  for (int c = 0; c < img.channels; ++c) {
    float* p = out.v.data() + std::size_t(c) * plane;
    for (std::size_t i = 0; i < plane; ++i)
      p[i] = p[i] * stddev[std::size_t(c)] + mean[std::size_t(c)];
  }
  return out;
}

void export_dataset(const Dataset& data, const std::string& dir,
                    const std::string& split) {
  const fs::path base = fs::path(dir) / split;
  fs::create_directories(base);
  std::ofstream manifest(fs::path(dir) / (split + ".csv"));
  if (!manifest) throw DataError("cannot write manifest under " + dir);
  manifest << "path,label,group,mask\n";
  for (const LabeledSample& s : data) {
    const std::string img_rel = split + "/" + s.id + ".png";
    write_png_gray((fs::path(dir) / img_rel).string(), s.image);
    std::string mask_rel;
    if (!s.mask.v.empty()) {
      mask_rel = split + "/" + s.id + "_mask.png";
      std::vector<std::uint8_t> m(s.mask.v.size());
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = s.mask.v[i] ? 255 : 0;
      write_png_gray8((fs::path(dir) / mask_rel).string(), m, s.mask.height,
                      s.mask.width);
    }
    manifest << img_rel << "," << s.label << "," << s.group << "," << mask_rel
             << "\n";
  }
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::map<std::string, Dataset> load_image_folder(
    const std::string& root,
    const std::map<std::string, std::string>& split_manifests, int side) {
  if (side < 1) throw ConfigError("load: image side must be positive");
  std::map<std::string, Dataset> out;
  std::map<std::string, std::string> group_split;  // leak detection
  for (const auto& [split, manifest_path] : split_manifests) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path);
    Dataset data;
    std::string line;
    bool first = true;
    long long row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      const std::vector<std::string> cols = split_csv_row(line);
      if (first && cols.size() >= 2 && cols[0] == "path") {
        first = false;
        continue;  // header
      }
      first = false;
      if (cols.size() < 3)
        throw DataError(manifest_path + ":" + std::to_string(row) +
                        ": expected path,label,group[,mask]");
      LabeledSample s;
      const std::string img_path = (fs::path(root) / cols[0]).string();
      try {
        s.image = resize_bilinear(read_png_gray(img_path), side, side);
      } catch (const DataError& e) {
        throw DataError(manifest_path + ":" + std::to_string(row) + ": " +
                        e.what());
      }
      try {
        s.label = std::stoi(cols[1]);
      } catch (...) {
        throw DataError(manifest_path + ":" + std::to_string(row) +
                        ": bad label '" + cols[1] + "'");
      }
      if (s.label != 0 && s.label != 1)
        throw DataError(manifest_path + ":" + std::to_string(row) +
                        ": label must be 0 or 1");
      s.group = cols[2];
      s.id = fs::path(cols[0]).stem().string();
      if (cols.size() >= 4 && !cols[3].empty()) {
        const ImageF mf = read_png_gray((fs::path(root) / cols[3]).string());
        Image<std::uint8_t> m(1, mf.height, mf.width);
        for (std::size_t i = 0; i < mf.v.size(); ++i)
          m.v[i] = mf.v[i] > 0.5f ? 1 : 0;
        s.mask = resize_nearest(m, side, side);
        s.markers = mask_centroids(s.mask);
      }
      auto it = group_split.find(s.group);
      if (it == group_split.end()) {
        group_split[s.group] = split;
      } else if (it->second != split) {
        throw DataError("group '" + s.group + "' appears in splits '" +
                        it->second + "' and '" + split + "'");
      }
      data.push_back(std::move(s));
    }
    out[split] = std::move(data);
  }
  return out;
}

}  // namespace protobag
