#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "protobag/errors.hpp"

namespace protobag {

// Adam over externally owned parameter/gradient arrays. Each registered array
// carries its own learning rate so backbone, prototypes and head can move at
// different speeds. Moments are kept in double regardless of T.
template <class T>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void add(std::vector<T>* param, std::vector<T>* grad, double lr) {
    if (!param || !grad || param->size() != grad->size())
      throw ConfigError("optimizer: parameter/gradient shape mismatch");
    Slot s;
    s.param = param;
    s.grad = grad;
    s.lr = lr;
    s.m.assign(param->size(), 0.0);
    s.v.assign(param->size(), 0.0);
    slots_.push_back(std::move(s));
  }

  void zero_grad() {
    for (Slot& s : slots_)
      std::fill(s.grad->begin(), s.grad->end(), T(0));
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (Slot& s : slots_) {
      T* p = s.param->data();
      const T* g = s.grad->data();
      for (std::size_t i = 0; i < s.param->size(); ++i) {
        const double gi = double(g[i]);
        s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * gi;
        s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p[i] = T(double(p[i]) - s.lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  long long steps_taken() const { return t_; }

 private:
  struct Slot {
    std::vector<T>* param = nullptr;
    std::vector<T>* grad = nullptr;
    double lr = 0.0;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  long long t_ = 0;
};

}  // namespace protobag
