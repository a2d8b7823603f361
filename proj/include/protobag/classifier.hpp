#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "protobag/errors.hpp"

namespace protobag {

enum class HeadKind { soft_aggregation, dense };

inline std::string head_kind_name(HeadKind k) {
  return k == HeadKind::soft_aggregation ? "soft_aggregation" : "dense";
}

inline HeadKind head_kind_from(const std::string& s) {
  if (s == "soft_aggregation") return HeadKind::soft_aggregation;
  if (s == "dense") return HeadKind::dense;
  throw ConfigError("unknown head kind: " + s);
}

// Linear layer from pooled prototype scores to class logits.
//
// soft_aggregation: one weight per prototype, and a prototype only feeds the
// class it belongs to; the cross-class entries are structurally zero, not
// trained toward zero.
// dense: full classes x prototypes matrix (the classic ProtoPNet wiring).
template <class T>
struct Head {
  HeadKind kind = HeadKind::soft_aggregation;
  int classes = 0;
  int prototypes = 0;
  int per_class = 0;
  std::vector<T> w;  // SA: [prototypes]; dense: [classes][prototypes]

  static Head soft_aggregation_head(int classes, int per_class) {
    Head h;
    h.kind = HeadKind::soft_aggregation;
    h.classes = classes;
    h.per_class = per_class;
    h.prototypes = classes * per_class;
    h.w.assign(h.prototypes, T(1));
    return h;
  }

  static Head dense_head(int classes, int per_class) {
    Head h;
    h.kind = HeadKind::dense;
    h.classes = classes;
    h.per_class = per_class;
    h.prototypes = classes * per_class;
    h.w.assign(std::size_t(classes) * h.prototypes, T(0));
    for (int c = 0; c < classes; ++c)
      for (int j = 0; j < h.prototypes; ++j)
        h.w[std::size_t(c) * h.prototypes + j] =
            (j / per_class == c) ? T(1) : T(-0.5);
    return h;
  }

  int class_of(int j) const { return j / per_class; }

  std::vector<T> forward(const std::vector<T>& pooled) const {
    if (int(pooled.size()) != prototypes)
      throw InputError("head: pooled score count mismatch");
    std::vector<T> logits(classes, T(0));
    if (kind == HeadKind::soft_aggregation) {
      for (int j = 0; j < prototypes; ++j)
        logits[std::size_t(class_of(j))] += w[std::size_t(j)] * pooled[std::size_t(j)];
    } else {
      for (int c = 0; c < classes; ++c) {
        double acc = 0.0;
        for (int j = 0; j < prototypes; ++j)
          acc += double(w[std::size_t(c) * prototypes + j]) *
                 double(pooled[std::size_t(j)]);
        logits[std::size_t(c)] = T(acc);
      }
    }
    return logits;
  }

  // Accumulates dL/dw into `dw` (same shape as w) and writes dL/dpooled.
  void backward(const std::vector<T>& pooled, const std::vector<T>& dlogits,
                std::vector<T>& dw, std::vector<T>& dpooled) const {
    dpooled.assign(prototypes, T(0));
    if (kind == HeadKind::soft_aggregation) {
      for (int j = 0; j < prototypes; ++j) {
        const int c = class_of(j);
        dw[std::size_t(j)] += dlogits[std::size_t(c)] * pooled[std::size_t(j)];
        dpooled[std::size_t(j)] = dlogits[std::size_t(c)] * w[std::size_t(j)];
      }
    } else {
      for (int c = 0; c < classes; ++c) {
        for (int j = 0; j < prototypes; ++j) {
          dw[std::size_t(c) * prototypes + j] +=
              dlogits[std::size_t(c)] * pooled[std::size_t(j)];
          dpooled[std::size_t(j)] +=
              dlogits[std::size_t(c)] * w[std::size_t(c) * prototypes + j];
        }
      }
    }
  }

  // L1 regularization target: all weights for the aggregation head, only the
  // cross-class entries for the dense head (the in-class ones carry the vote).
  double l1() const {
    double s = 0.0;
    if (kind == HeadKind::soft_aggregation) {
      for (const T& x : w) s += std::abs(double(x));
    } else {
      for (int c = 0; c < classes; ++c)
        for (int j = 0; j < prototypes; ++j)
          if (class_of(j) != c)
            s += std::abs(double(w[std::size_t(c) * prototypes + j]));
    }
    return s;
  }

  void add_l1_grad(T scale, std::vector<T>& dw) const {
    auto sgn = [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); };
    if (kind == HeadKind::soft_aggregation) {
      for (int j = 0; j < prototypes; ++j)
        dw[std::size_t(j)] += scale * sgn(w[std::size_t(j)]);
    } else {
      for (int c = 0; c < classes; ++c)
        for (int j = 0; j < prototypes; ++j)
          if (class_of(j) != c)
            dw[std::size_t(c) * prototypes + j] +=
                scale * sgn(w[std::size_t(c) * prototypes + j]);
    }
  }
};

}  // namespace protobag
