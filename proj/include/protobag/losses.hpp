#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "protobag/errors.hpp"
#include "protobag/prototypes.hpp"
#include "protobag/types.hpp"

namespace protobag {

struct LossWeights {
  double clst = 0.8;
  double sep = 0.08;
  double l1_classifier = 1e-4;
  double l1_similarity = 4e-2;
  double dissimilarity = 5e-3;
};

// Term values for one batch; kept around so a diverging run can say which
// term blew up.
struct LossTerms {
  double ce = 0.0;
  double clst = 0.0;
  double sep = 0.0;  // already negated: -mean of nearest other-class distance
  double l1c = 0.0;
  double l1s = 0.0;
  double diss = 0.0;
  double total = 0.0;

  std::string to_string() const {
    std::ostringstream os;
    os << "total=" << total << " ce=" << ce << " clst=" << clst
       << " sep=" << sep << " l1c=" << l1c << " l1s=" << l1s
       << " diss=" << diss;
    return os.str();
  }
};

inline double combine_losses(const LossTerms& t, const LossWeights& w) {
  return t.ce + w.clst * t.clst + w.sep * t.sep + w.l1_classifier * t.l1c +
         w.l1_similarity * t.l1s - w.dissimilarity * t.diss;
}

// Numerically stable softmax cross entropy for one sample. `probs` comes back
// for reuse; dlogits = probs - onehot(label).
template <class T>
double cross_entropy(const std::vector<T>& logits, int label,
                     std::vector<T>* probs_out = nullptr) {
  const int c = int(logits.size());
  if (label < 0 || label >= c) throw InputError("cross_entropy: label out of range");
  double mx = double(logits[0]);
  for (int i = 1; i < c; ++i) mx = std::max(mx, double(logits[i]));
  double z = 0.0;
  std::vector<T> probs(c);
  for (int i = 0; i < c; ++i) {
    const double e = std::exp(double(logits[i]) - mx);
    probs[std::size_t(i)] = T(e);
    z += e;
  }
  for (int i = 0; i < c; ++i) probs[std::size_t(i)] = T(double(probs[std::size_t(i)]) / z);
  if (probs_out) *probs_out = probs;
  return std::log(z) - (double(logits[std::size_t(label)]) - mx);
}

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  std::vector<T> probs;
  cross_entropy(logits, 0, &probs);
  return probs;
}

// Location of a per-sample minimum distance, for routing its gradient.
struct MinHit {
  int proto = -1;
  int cell = -1;
  double value = 0.0;
};

// Smallest distance over the sample's own-class prototypes and all cells.
// First occurrence in (prototype, cell) order wins ties.
template <class T>
MinHit min_distance_hit(const MapStack<T>& dist, int label, int per_class,
                        bool same_class) {
  MinHit hit;
  const int cells = dist.cells();
  for (int j = 0; j < dist.count; ++j) {
    const bool own = (j / per_class) == label;
    if (own != same_class) continue;
    const T* m = dist.map(j);
    for (int cell = 0; cell < cells; ++cell) {
      if (hit.proto < 0 || double(m[cell]) < hit.value) {
        hit.proto = j;
        hit.cell = cell;
        hit.value = double(m[cell]);
      }
    }
  }
  if (hit.proto < 0)
    throw InputError("no prototypes on the requested side of class " +
                     std::to_string(label));
  return hit;
}

template <class T>
MinHit cluster_hit(const MapStack<T>& dist, int label, int per_class) {
  return min_distance_hit(dist, label, per_class, true);
}

template <class T>
MinHit separation_hit(const MapStack<T>& dist, int label, int per_class) {
  return min_distance_hit(dist, label, per_class, false);
}

// Mean over the batch of the nearest same-class prototype distance.
template <class T>
double cluster_loss(const std::vector<MapStack<T>>& dists,
                    const std::vector<int>& labels, int per_class) {
  double s = 0.0;
  for (std::size_t i = 0; i < dists.size(); ++i)
    s += cluster_hit(dists[i], labels[i], per_class).value;
  return s / double(dists.size());
}

// Negated mean of the nearest other-class prototype distance; minimizing it
// pushes other-class prototypes away.
template <class T>
double separation_loss(const std::vector<MapStack<T>>& dists,
                       const std::vector<int>& labels, int per_class) {
  double s = 0.0;
  for (std::size_t i = 0; i < dists.size(); ++i)
    s += separation_hit(dists[i], labels[i], per_class).value;
  return -s / double(dists.size());
}

// Mean over maps of the mean absolute similarity (sparsity pressure on the
// similarity maps themselves).
template <class T>
double l1_similarity(const MapStack<T>& sim) {
  double s = 0.0;
  for (const T& x : sim.v) s += std::abs(double(x));
  return s / double(sim.v.size());
}

// Sum over unordered prototype pairs of the squared L2 distance. Enters the
// objective subtracted, so training pushes prototypes apart.
template <class T>
double dissimilarity(const PrototypeBank<T>& bank) {
  double s = 0.0;
  for (int i = 0; i < bank.count(); ++i)
    for (int j = i + 1; j < bank.count(); ++j)
      s += double(squared_distance(bank.vec(i), bank.vec(j), bank.dim));
  return s;
}

// d/dp_i sum_{i<j} ||p_i - p_j||^2 = 2 (b p_i - sum_j p_j), scaled by `scale`
// and accumulated into dprotos ([count][dim], same layout as the bank).
template <class T>
void add_dissimilarity_grad(const PrototypeBank<T>& bank, T scale,
                            std::vector<T>& dprotos) {
  const int b = bank.count(), d = bank.dim;
  std::vector<double> sum(d, 0.0);
  for (int j = 0; j < b; ++j)
    for (int i = 0; i < d; ++i) sum[std::size_t(i)] += double(bank.vec(j)[i]);
  for (int j = 0; j < b; ++j) {
    const T* p = bank.vec(j);
    T* g = dprotos.data() + std::size_t(j) * d;
    for (int i = 0; i < d; ++i)
      g[i] += scale * T(2.0 * (double(b) * double(p[i]) - sum[std::size_t(i)]));
  }
}

}  // namespace protobag
