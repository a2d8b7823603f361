#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "protobag/errors.hpp"
#include "protobag/geometry.hpp"
#include "protobag/rng.hpp"
#include "protobag/types.hpp"

namespace protobag {

// Where a pushed prototype came from.
struct Provenance {
  bool valid = false;
  long long sample_index = -1;
  std::string sample_id;
  int cell_row = 0, cell_col = 0;
  Box box;
  double distance = 0.0;
  double similarity = 0.0;
};

template <class T>
struct PrototypeBank {
  int per_class = 0;
  int classes = 0;
  int dim = 0;
  std::vector<T> vectors;  // [count][dim]
  std::vector<Provenance> provenance;

  int count() const { return per_class * classes; }
  int class_of(int j) const { return j / per_class; }
  T* vec(int j) { return vectors.data() + std::size_t(j) * dim; }
  const T* vec(int j) const { return vectors.data() + std::size_t(j) * dim; }
};

template <class T>
PrototypeBank<T> init_prototypes(int per_class, int classes, int dim,
                                 std::uint64_t seed) {
  if (per_class < 1 || classes < 2 || dim < 1)
    throw ConfigError("prototype bank: need per_class >= 1, classes >= 2, dim >= 1");
  PrototypeBank<T> bank;
  bank.per_class = per_class;
  bank.classes = classes;
  bank.dim = dim;
  bank.vectors.resize(std::size_t(bank.count()) * dim);
  bank.provenance.resize(bank.count());
  Rng rng(seed);
  for (auto& x : bank.vectors) x = T(rng.uniform());
  return bank;
}

template <class T>
T squared_distance(const T* a, const T* b, int dim) {
  double acc = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return T(acc);
}

// One map per prototype: squared L2 distance to every feature cell.
template <class T>
MapStack<T> squared_distance_maps(const FeatureMap<T>& fm,
                                  const PrototypeBank<T>& bank) {
  if (fm.depth != bank.dim)
    throw InputError("feature depth " + std::to_string(fm.depth) +
                     " does not match prototype dim " + std::to_string(bank.dim));
  MapStack<T> out(bank.count(), fm.rows, fm.cols);
  const int n = fm.cells();
  for (int j = 0; j < bank.count(); ++j) {
    const T* p = bank.vec(j);
    T* m = out.map(j);
    for (int cell = 0; cell < n; ++cell)
      m[cell] = squared_distance(fm.v.data() + std::size_t(cell) * fm.depth, p,
                                 fm.depth);
  }
  return out;
}

// s = log((d + 1) / (d + eps)), monotone decreasing in d, peak log(1/eps) at d=0.
template <class T>
T similarity_from_distance(T d, double epsilon) {
  return T(std::log1p((1.0 - epsilon) / (double(d) + epsilon)));
}

// d(s)/d(d) for the chain rule.
template <class T>
T similarity_ddist(T d, double epsilon) {
  return T(1.0 / (double(d) + 1.0) - 1.0 / (double(d) + epsilon));
}

template <class T>
MapStack<T> similarity_maps(const MapStack<T>& dist, double epsilon) {
  MapStack<T> out(dist.count, dist.rows, dist.cols);
  for (std::size_t i = 0; i < dist.v.size(); ++i)
    out.v[i] = similarity_from_distance(dist.v[i], epsilon);
  return out;
}

// Indices of the k largest map entries, ties broken toward the smaller flat
// (row-major) index. k is clamped to the map size.
template <class T>
std::vector<int> topk_cells(const T* map, int cells, int k) {
  if (cells < 1) throw InputError("topk over empty map");
  if (k < 1) throw InputError("topk needs k >= 1");
  k = std::min(k, cells);
  std::vector<int> idx(cells);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [map](int a, int b) {
                      if (map[a] != map[b]) return map[a] > map[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

template <class T>
T topk_avg(const T* map, int cells, int k) {
  const std::vector<int> idx = topk_cells(map, cells, k);
  double s = 0.0;
  for (int i : idx) s += double(map[i]);
  return T(s / double(idx.size()));
}

// Pooled score per prototype: mean of its k largest similarities.
template <class T>
std::vector<T> topk_avg_pool(const MapStack<T>& sim, int k) {
  std::vector<T> out(sim.count);
  for (int j = 0; j < sim.count; ++j)
    out[j] = topk_avg(sim.map(j), sim.cells(), k);
  return out;
}

struct PushEntry {
  int prototype = 0;
  int cls = 0;
  Provenance prov;
  double shift = 0.0;  // L2 distance moved by the projection
};

struct PushReport {
  std::vector<PushEntry> entries;
  // groups of prototypes that landed on the same feature vector
  std::vector<std::vector<int>> duplicates;

  std::string to_text() const {
    std::ostringstream os;
    for (const PushEntry& e : entries) {
      os << "prototype " << e.prototype << " (class " << e.cls << ") <- sample "
         << e.prov.sample_id << " cell (" << e.prov.cell_row << ","
         << e.prov.cell_col << ") box [" << e.prov.box.row0 << ","
         << e.prov.box.col0 << ")x[" << e.prov.box.row1 << "," << e.prov.box.col1
         << ") dist " << e.prov.distance << " sim " << e.prov.similarity
         << " shift " << e.shift << "\n";
    }
    for (const auto& g : duplicates) {
      os << "duplicate prototypes:";
      for (int j : g) os << " " << j;
      os << "\n";
    }
    return os.str();
  }
};

// Projects every prototype onto its nearest feature vector among all cells of
// all same-class training images. Distances are measured against the pre-push
// vectors; ties resolve to the first occurrence in (image, row, col) order.
// `encode` maps an image index to its feature map.
template <class T, class Encode>
PushReport push_prototypes(PrototypeBank<T>& bank, const Encode& encode,
                           const std::vector<int>& labels,
                           const std::vector<std::string>& ids, double epsilon) {
  const int b = bank.count();
  const long long n = (long long)labels.size();
  if (n == 0) throw InputError("push over empty dataset");
  std::vector<double> best(b, std::numeric_limits<double>::infinity());
  std::vector<Provenance> prov(b);
  std::vector<std::vector<T>> best_vec(b);
  for (long long i = 0; i < n; ++i) {
    const FeatureMap<T> fm = encode(i);
    if (fm.depth != bank.dim) throw InputError("push: feature depth mismatch");
    for (int j = 0; j < b; ++j) {
      if (bank.class_of(j) != labels[std::size_t(i)]) continue;
      const T* p = bank.vec(j);
      for (int r = 0; r < fm.rows; ++r) {
        for (int c = 0; c < fm.cols; ++c) {
          const T* z = fm.v.data() + (std::size_t(r) * fm.cols + c) * fm.depth;
          double acc = 0.0;
          for (int d = 0; d < fm.depth; ++d) {
            const double diff = double(p[d]) - double(z[d]);
            acc += diff * diff;
          }
          if (acc < best[j]) {
            best[j] = acc;
            prov[j].valid = true;
            prov[j].sample_index = i;
            prov[j].sample_id = ids.empty() ? std::to_string(i) : ids[std::size_t(i)];
            prov[j].cell_row = r;
            prov[j].cell_col = c;
            prov[j].box = feature_to_input_box(fm.geom, r, c);
            prov[j].distance = acc;
            prov[j].similarity =
                double(similarity_from_distance(T(acc), epsilon));
            best_vec[j].assign(z, z + fm.depth);
          }
        }
      }
    }
  }
  PushReport report;
  for (int j = 0; j < b; ++j) {
    if (!prov[j].valid)
      throw DataError("push: no same-class image for prototype " +
                      std::to_string(j) + "; class " +
                      std::to_string(bank.class_of(j)) + " unrepresented");
    double shift = 0.0;
    T* p = bank.vec(j);
    for (int d = 0; d < bank.dim; ++d) {
      const double diff = double(p[d]) - double(best_vec[j][d]);
      shift += diff * diff;
      p[d] = best_vec[j][d];
    }
    bank.provenance[std::size_t(j)] = prov[j];
    PushEntry e;
    e.prototype = j;
    e.cls = bank.class_of(j);
    e.prov = prov[j];
    e.shift = std::sqrt(shift);
    report.entries.push_back(e);
  }
  // group prototypes landing on the same source cell
  std::vector<char> seen(b, 0);
  for (int a = 0; a < b; ++a) {
    if (seen[a]) continue;
    std::vector<int> group{a};
    for (int c = a + 1; c < b; ++c) {
      if (seen[c]) continue;
      if (prov[a].sample_index == prov[c].sample_index &&
          prov[a].cell_row == prov[c].cell_row &&
          prov[a].cell_col == prov[c].cell_col) {
        group.push_back(c);
        seen[c] = 1;
      }
    }
    if (group.size() > 1) report.duplicates.push_back(group);
  }
  return report;
}

// Smallest pairwise squared distance in the bank; the separation measure the
// dissimilarity penalty is meant to push up.
template <class T>
double min_pairwise_sqdist(const PrototypeBank<T>& bank) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < bank.count(); ++i)
    for (int j = i + 1; j < bank.count(); ++j)
      best = std::min(best, double(squared_distance(bank.vec(i), bank.vec(j),
                                                    bank.dim)));
  return best;
}

}  // namespace protobag
