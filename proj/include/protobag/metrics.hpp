#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "protobag/errors.hpp"
#include "protobag/rng.hpp"

namespace protobag {

// Mann-Whitney AUC via midranks; ties contribute 1/2. Returns NaN when one of
// the classes is absent (callers are expected to warn).
inline double auc_score(const std::vector<double>& scores,
                        const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  if (n != labels.size()) throw InputError("auc: size mismatch");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("auc: labels must be 0/1");
    pos += std::size_t(l);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * (double(i) + double(j)) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[idx[t]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  return (rank_sum_pos - double(pos) * (double(pos) + 1.0) / 2.0) /
         (double(pos) * double(neg));
}

inline double accuracy(const std::vector<int>& predicted,
                       const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || predicted.empty())
    throw InputError("accuracy: bad input sizes");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (predicted[i] == labels[i]) ++hit;
  return double(hit) / double(labels.size());
}

// Recall and precision of class 1. Empty denominators return NaN.
inline double recall_pos(const std::vector<int>& predicted,
                         const std::vector<int>& labels) {
  std::size_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    if (predicted[i] == 1) ++tp; else ++fn;
  }
  if (tp + fn == 0) return std::numeric_limits<double>::quiet_NaN();
  return double(tp) / double(tp + fn);
}

inline double precision_pos(const std::vector<int>& predicted,
                            const std::vector<int>& labels) {
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] != 1) continue;
    if (labels[i] == 1) ++tp; else ++fp;
  }
  if (tp + fp == 0) return std::numeric_limits<double>::quiet_NaN();
  return double(tp) / double(tp + fp);
}

struct ConfidenceInterval {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap over samples. Resamples with a dedicated RNG stream so
// results are reproducible for a given seed.
template <class Stat>
ConfidenceInterval bootstrap_ci(std::size_t n, const Stat& stat,
                                int resamples = 1000, double level = 0.95,
                                std::uint64_t seed = 17) {
  if (n == 0) throw InputError("bootstrap over empty sample");
  std::vector<std::size_t> take(n);
  std::vector<double> vals;
  vals.reserve(std::size_t(resamples));
  Rng rng(seed);
  for (int r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < n; ++i) take[i] = std::size_t(rng.below(n));
    const double v = stat(take);
    if (std::isfinite(v)) vals.push_back(v);
  }
  std::iota(take.begin(), take.end(), std::size_t(0));
  ConfidenceInterval ci;
  ci.point = stat(take);
  if (vals.empty()) {
    ci.lo = ci.hi = std::numeric_limits<double>::quiet_NaN();
    return ci;
  }
  std::sort(vals.begin(), vals.end());
  const double alpha = (1.0 - level) / 2.0;
  auto pick = [&](double q) {
    const double pos = q * double(vals.size() - 1);
    const std::size_t lo = std::size_t(pos);
    const std::size_t hi = std::min(lo + 1, vals.size() - 1);
    const double frac = pos - double(lo);
    return vals[lo] * (1.0 - frac) + vals[hi] * frac;
  };
  ci.lo = pick(alpha);
  ci.hi = pick(1.0 - alpha);
  return ci;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace protobag
