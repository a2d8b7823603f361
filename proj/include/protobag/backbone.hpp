#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "protobag/errors.hpp"
#include "protobag/geometry.hpp"
#include "protobag/rng.hpp"
#include "protobag/types.hpp"
#include "protobag/util.hpp"

namespace protobag {

struct LayerSpec {
  int kernel = 3;        // 1 or 3
  int stride = 1;
  int out_channels = 0;
  int pad = 0;           // symmetric zero padding
  bool relu = true;
  bool norm = false;     // running-statistics channel normalization
};

struct BackboneConfig {
  int in_channels = 1;
  int input_height = 0;
  int input_width = 0;
  std::vector<LayerSpec> layers;
};

inline void validate_backbone_config(const BackboneConfig& cfg) {
  if (cfg.in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1");
  if (cfg.input_height < 1 || cfg.input_width < 1)
    throw ConfigError("backbone: input size must be positive");
  if (cfg.layers.empty()) throw ConfigError("backbone: no layers configured");
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const std::string where = "backbone layer " + std::to_string(i) + ": ";
    if (l.kernel != 1 && l.kernel != 3)
      throw ConfigError(where + "kernel size must be 1 or 3");
    if (l.stride < 1) throw ConfigError(where + "stride must be >= 1");
    if (l.out_channels < 1) throw ConfigError(where + "out_channels must be >= 1");
    if (l.pad < 0) throw ConfigError(where + "padding must be >= 0");
  }
}

// Closed-form receptive field, stride and padding of the stacked convolutions:
//   r   <- r + (k - 1) * s_cum,  p <- p + pad * s_cum,  s_cum <- s_cum * stride
// where s_cum is the cumulative stride of the preceding layers.
inline RFGeometry compute_geometry(const BackboneConfig& cfg) {
  validate_backbone_config(cfg);
  RFGeometry g;
  g.input_height = cfg.input_height;
  g.input_width = cfg.input_width;
  int r = 1, p = 0;
  long long s = 1;
  int h = cfg.input_height, w = cfg.input_width;
  for (const LayerSpec& l : cfg.layers) {
    r += (l.kernel - 1) * int(s);
    p += l.pad * int(s);
    s *= l.stride;
    const int hn = h + 2 * l.pad - l.kernel;
    const int wn = w + 2 * l.pad - l.kernel;
    if (hn < 0 || wn < 0)
      throw ConfigError("backbone: feature map vanishes for the configured input size");
    h = hn / l.stride + 1;
    w = wn / l.stride + 1;
  }
  if (h < 1 || w < 1)
    throw ConfigError("backbone: feature map vanishes for the configured input size");
  g.receptive_field = r;
  g.total_stride = int(s);
  g.total_padding = p;
  g.feature_rows = h;
  g.feature_cols = w;
  return g;
}

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// patches: (cin*k*k) x (hout*wout), laid out so that row (ci, ky, kx) holds
// the input value each output cell sees at that kernel tap.
template <class T>
void im2col(const T* x, int cin, int hin, int win, int k, int stride, int hout,
            int wout, T* patches) {
  const std::size_t ncells = std::size_t(hout) * wout;
  for (int ci = 0; ci < cin; ++ci) {
    const T* xc = x + std::size_t(ci) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = patches + ((std::size_t(ci) * k + ky) * k + kx) * ncells;
        for (int oy = 0; oy < hout; ++oy) {
          const T* src = xc + std::size_t(oy * stride + ky) * win + kx;
          T* dst = row + std::size_t(oy) * wout;
          if (stride == 1) {
            for (int ox = 0; ox < wout; ++ox) dst[ox] = src[ox];
          } else {
            for (int ox = 0; ox < wout; ++ox) dst[ox] = src[ox * stride];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* patches, int cin, int hin, int win, int k, int stride,
                int hout, int wout, T* dx) {
  const std::size_t ncells = std::size_t(hout) * wout;
  for (int ci = 0; ci < cin; ++ci) {
    T* xc = dx + std::size_t(ci) * hin * win;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = patches + ((std::size_t(ci) * k + ky) * k + kx) * ncells;
        for (int oy = 0; oy < hout; ++oy) {
          T* dst = xc + std::size_t(oy * stride + ky) * win + kx;
          const T* src = row + std::size_t(oy) * wout;
          for (int ox = 0; ox < wout; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace detail

// Small-receptive-field convolutional feature extractor. Forward/backward are
// hand-rolled (im2col + GEMM); geometry is exact and queryable. Immutable
// during inference; training mode additionally updates the running channel
// statistics of normalization layers.
template <class T>
class Backbone {
 public:
  struct Layer {
    LayerSpec spec;
    int cin = 0, hin = 0, win = 0, hout = 0, wout = 0;
    std::vector<T> w;  // [cout][cin][k][k]
    std::vector<T> b;  // [cout]
    std::vector<T> run_mean, run_var;  // norm layers only
  };

  // Per-batch activation cache for backward passes.
  struct Cache {
    int items = 0;
    std::vector<const Image<T>*> input;
    std::vector<std::vector<std::vector<T>>> outs;  // [layer][item], CHW
    std::vector<std::vector<T>> norm_scale;         // [layer], per channel
  };

  struct Grads {
    std::vector<std::vector<T>> w, b;

    void resize_like(const Backbone& bb) {
      w.resize(bb.layers_.size());
      b.resize(bb.layers_.size());
      for (std::size_t i = 0; i < bb.layers_.size(); ++i) {
        w[i].assign(bb.layers_[i].w.size(), T(0));
        b[i].assign(bb.layers_[i].b.size(), T(0));
      }
    }
    void clear() {
      for (auto& g : w) std::fill(g.begin(), g.end(), T(0));
      for (auto& g : b) std::fill(g.begin(), g.end(), T(0));
    }
    void add(const Grads& o) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        for (std::size_t j = 0; j < w[i].size(); ++j) w[i][j] += o.w[i][j];
        for (std::size_t j = 0; j < b[i].size(); ++j) b[i][j] += o.b[i][j];
      }
    }
  };

  Backbone() = default;

  Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    geom_ = compute_geometry(cfg);
    int cin = cfg.in_channels;
    int h = cfg.input_height, w = cfg.input_width;
    layers_.resize(cfg.layers.size());
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
      Layer& L = layers_[i];
      L.spec = cfg.layers[i];
      L.cin = cin;
      L.hin = h;
      L.win = w;
      L.hout = (h + 2 * L.spec.pad - L.spec.kernel) / L.spec.stride + 1;
      L.wout = (w + 2 * L.spec.pad - L.spec.kernel) / L.spec.stride + 1;
      const int k = L.spec.kernel;
      L.w.resize(std::size_t(L.spec.out_channels) * cin * k * k);
      L.b.assign(L.spec.out_channels, T(0));
      Rng rng = Rng::stream(seed, i);
      const double scale = std::sqrt(2.0 / (double(cin) * k * k));
      for (auto& x : L.w) x = T(rng.normal() * scale);
      if (L.spec.norm) {
        L.run_mean.assign(L.spec.out_channels, T(0));
        L.run_var.assign(L.spec.out_channels, T(1));
      }
      cin = L.spec.out_channels;
      h = L.hout;
      w = L.wout;
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  const RFGeometry& geometry() const { return geom_; }
  int feature_depth() const { return layers_.back().spec.out_channels; }
  int layer_count() const { return int(layers_.size()); }
  Layer& layer(int i) { return layers_[i]; }
  const Layer& layer(int i) const { return layers_[i]; }

  // Frozen-to-identity switch for normalization layers; used by the 64-bit
  // verification suites so finite differences stay exact.
  bool& norm_identity() { return norm_identity_; }
  bool norm_identity() const { return norm_identity_; }

  // Inference-mode features of a single image (running stats, no updates).
  FeatureMap<T> features(const Image<T>& img) const {
    check_input(img);
    std::vector<T> cur(img.v);
    std::vector<T> next;
    for (const Layer& L : layers_) {
      next.assign(std::size_t(L.spec.out_channels) * L.hout * L.wout, T(0));
      conv_forward(L, cur.data(), next.data());
      if (L.spec.norm && !norm_identity_) {
        std::vector<T> scale, mean;
        norm_constants(L, scale, mean);
        apply_norm(L, next.data(), mean.data(), scale.data());
      }
      if (L.spec.relu) apply_relu(next.data(), next.size());
      cur.swap(next);
    }
    return to_hwd(cur.data());
  }

  // Batched training/eval forward with caches. When `update_stats` is set the
  // normalization layers fold the batch statistics into their running values
  // before normalizing; reduction over items is serial so results do not
  // depend on the thread count.
  void forward_batch(const std::vector<const Image<T>*>& batch,
                     bool update_stats, Cache& cache, int threads) {
    const int n = int(batch.size());
    if (n == 0) throw InputError("empty batch");
    for (const auto* im : batch) check_input(*im);
    cache.items = n;
    cache.input = batch;
    cache.outs.assign(layers_.size(), {});
    cache.norm_scale.assign(layers_.size(), {});
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      Layer& L = layers_[li];
      auto& outs = cache.outs[li];
      outs.resize(n);
      const std::size_t out_size = std::size_t(L.spec.out_channels) * L.hout * L.wout;
      parallel_for(n, threads, [&](int i) {
        const T* in = li == 0 ? batch[i]->v.data() : cache.outs[li - 1][i].data();
        outs[i].assign(out_size, T(0));
        conv_forward(L, in, outs[i].data());
      });
      if (L.spec.norm && !norm_identity_) {
        std::vector<T> mean, scale;
        if (update_stats) update_running_stats(L, outs, threads);
        norm_constants(L, scale, mean);
        cache.norm_scale[li] = scale;
        parallel_for(n, threads, [&](int i) {
          apply_norm(L, outs[i].data(), mean.data(), scale.data());
        });
      }
      if (L.spec.relu) {
        parallel_for(n, threads, [&](int i) {
          apply_relu(outs[i].data(), outs[i].size());
        });
      }
    }
  }

  FeatureMap<T> feature_map(const Cache& cache, int item) const {
    return to_hwd(cache.outs.back()[item].data());
  }

  // Backward for one batch item. `dfm_hwd` is the gradient at the feature map
  // in [row][col][depth] layout. Parameter gradients accumulate into `grads`;
  // pass `dinput` to also get the gradient w.r.t. the image.
  void backward_item(const Cache& cache, int item, const T* dfm_hwd,
                     Grads& grads, std::vector<T>* dinput = nullptr) const {
    const Layer& last = layers_.back();
    std::vector<T> dcur = hwd_to_chw(dfm_hwd);
    std::vector<T> dprev;
    for (int li = int(layers_.size()) - 1; li >= 0; --li) {
      const Layer& L = layers_[li];
      const std::vector<T>& out = cache.outs[li][item];
      if (L.spec.relu) {
        for (std::size_t j = 0; j < dcur.size(); ++j)
          if (out[j] <= T(0)) dcur[j] = T(0);
      }
      if (L.spec.norm && !norm_identity_) {
        const std::vector<T>& scale = cache.norm_scale[li];
        const std::size_t plane = std::size_t(L.hout) * L.wout;
        for (int c = 0; c < L.spec.out_channels; ++c) {
          T* d = dcur.data() + std::size_t(c) * plane;
          for (std::size_t j = 0; j < plane; ++j) d[j] *= scale[c];
        }
      }
      const T* in = li == 0 ? cache.input[item]->v.data()
                            : cache.outs[li - 1][item].data();
      const bool need_dx = li > 0 || dinput != nullptr;
      if (need_dx)
        dprev.assign(std::size_t(L.cin) * L.hin * L.win, T(0));
      conv_backward(L, in, dcur.data(), grads.w[li].data(), grads.b[li].data(),
                    need_dx ? dprev.data() : nullptr);
      if (li == 0 && dinput != nullptr) *dinput = dprev;
      dcur.swap(dprev);
    }
    (void)last;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> param_arrays() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      out.push_back({"backbone.layer" + std::to_string(i) + ".weight", &layers_[i].w});
      out.push_back({"backbone.layer" + std::to_string(i) + ".bias", &layers_[i].b});
    }
    return out;
  }

  // Running statistics (state, not optimized parameters).
  std::vector<std::pair<std::string, std::vector<T>*>> stat_arrays() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].spec.norm) continue;
      out.push_back({"backbone.layer" + std::to_string(i) + ".running_mean",
                     &layers_[i].run_mean});
      out.push_back({"backbone.layer" + std::to_string(i) + ".running_var",
                     &layers_[i].run_var});
    }
    return out;
  }

 private:
  static constexpr double kNormEps = 1e-5;
  static constexpr double kNormMomentum = 0.1;

  void check_input(const Image<T>& img) const {
    if (img.channels != cfg_.in_channels || img.height != cfg_.input_height ||
        img.width != cfg_.input_width) {
      throw InputError("image shape " + std::to_string(img.channels) + "x" +
                       std::to_string(img.height) + "x" +
                       std::to_string(img.width) + " does not match configured " +
                       std::to_string(cfg_.in_channels) + "x" +
                       std::to_string(cfg_.input_height) + "x" +
                       std::to_string(cfg_.input_width));
    }
  }

  void conv_forward(const Layer& L, const T* in, T* out) const {
    const int k = L.spec.kernel;
    const int ph = L.hin + 2 * L.spec.pad, pw = L.win + 2 * L.spec.pad;
    static thread_local std::vector<T> padded, patches;
    const T* src = in;
    if (L.spec.pad > 0) {
      padded.assign(std::size_t(L.cin) * ph * pw, T(0));
      for (int c = 0; c < L.cin; ++c)
        for (int y = 0; y < L.hin; ++y)
          std::copy(in + (std::size_t(c) * L.hin + y) * L.win,
                    in + (std::size_t(c) * L.hin + y + 1) * L.win,
                    padded.data() + (std::size_t(c) * ph + y + L.spec.pad) * pw +
                        L.spec.pad);
      src = padded.data();
    }
    const std::size_t ncells = std::size_t(L.hout) * L.wout;
    const int krows = L.cin * k * k;
    patches.resize(std::size_t(krows) * ncells);
    detail::im2col(src, L.cin, ph, pw, k, L.spec.stride, L.hout, L.wout,
                   patches.data());
    Eigen::Map<const detail::MatRM<T>> W(L.w.data(), L.spec.out_channels, krows);
    Eigen::Map<const detail::MatRM<T>> P(patches.data(), krows, ncells);
    Eigen::Map<detail::MatRM<T>> O(out, L.spec.out_channels, ncells);
    O.noalias() = W * P;
    for (int c = 0; c < L.spec.out_channels; ++c)
      O.row(c).array() += L.b[std::size_t(c)];
  }

  void conv_backward(const Layer& L, const T* in, const T* dout, T* dw, T* db,
                     T* dx) const {
    const int k = L.spec.kernel;
    const int ph = L.hin + 2 * L.spec.pad, pw = L.win + 2 * L.spec.pad;
    static thread_local std::vector<T> padded, patches, dpatches, dpadded;
    const T* src = in;
    if (L.spec.pad > 0) {
      padded.assign(std::size_t(L.cin) * ph * pw, T(0));
      for (int c = 0; c < L.cin; ++c)
        for (int y = 0; y < L.hin; ++y)
          std::copy(in + (std::size_t(c) * L.hin + y) * L.win,
                    in + (std::size_t(c) * L.hin + y + 1) * L.win,
                    padded.data() + (std::size_t(c) * ph + y + L.spec.pad) * pw +
                        L.spec.pad);
      src = padded.data();
    }
    const std::size_t ncells = std::size_t(L.hout) * L.wout;
    const int krows = L.cin * k * k;
    patches.resize(std::size_t(krows) * ncells);
    detail::im2col(src, L.cin, ph, pw, k, L.spec.stride, L.hout, L.wout,
                   patches.data());
    Eigen::Map<const detail::MatRM<T>> P(patches.data(), krows, ncells);
    Eigen::Map<const detail::MatRM<T>> dO(dout, L.spec.out_channels, ncells);
    Eigen::Map<detail::MatRM<T>> dW(dw, L.spec.out_channels, krows);
    dW.noalias() += dO * P.transpose();
    // bias grad summed serially: Eigen's redux peels to the runtime buffer
    // alignment, which varies allocation to allocation and breaks bitwise
    // reproducibility
    for (int c = 0; c < L.spec.out_channels; ++c) {
      const T* row = dout + std::size_t(c) * ncells;
      double s = 0.0;
      for (std::size_t j = 0; j < ncells; ++j) s += double(row[j]);
      db[c] += T(s);
    }
    if (dx == nullptr) return;
    dpatches.resize(std::size_t(krows) * ncells);
    Eigen::Map<const detail::MatRM<T>> W(L.w.data(), L.spec.out_channels, krows);
    Eigen::Map<detail::MatRM<T>> dP(dpatches.data(), krows, ncells);
    dP.noalias() = W.transpose() * dO;
    if (L.spec.pad > 0) {
      dpadded.assign(std::size_t(L.cin) * ph * pw, T(0));
      detail::col2im_add(dpatches.data(), L.cin, ph, pw, k, L.spec.stride,
                         L.hout, L.wout, dpadded.data());
      for (int c = 0; c < L.cin; ++c)
        for (int y = 0; y < L.hin; ++y)
          for (int x = 0; x < L.win; ++x)
            dx[(std::size_t(c) * L.hin + y) * L.win + x] +=
                dpadded[(std::size_t(c) * ph + y + L.spec.pad) * pw + x +
                        L.spec.pad];
    } else {
      detail::col2im_add(dpatches.data(), L.cin, ph, pw, k, L.spec.stride,
                         L.hout, L.wout, dx);
    }
  }

  static void apply_relu(T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > T(0) ? x[i] : T(0);
  }

  void norm_constants(const Layer& L, std::vector<T>& scale,
                      std::vector<T>& mean) const {
    const int c = L.spec.out_channels;
    scale.resize(c);
    mean.resize(c);
    for (int i = 0; i < c; ++i) {
      mean[i] = L.run_mean[std::size_t(i)];
      scale[i] = T(1.0 / std::sqrt(double(L.run_var[std::size_t(i)]) + kNormEps));
    }
  }

  static void apply_norm(const Layer& L, T* x, const T* mean, const T* scale) {
    const std::size_t plane = std::size_t(L.hout) * L.wout;
    for (int c = 0; c < L.spec.out_channels; ++c) {
      T* p = x + std::size_t(c) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - mean[c]) * scale[c];
    }
  }

  void update_running_stats(Layer& L, const std::vector<std::vector<T>>& outs,
                            int threads) {
    const int c = L.spec.out_channels;
    const std::size_t plane = std::size_t(L.hout) * L.wout;
    const int n = int(outs.size());
    std::vector<std::vector<double>> sums(n), sqs(n);
    parallel_for(n, threads, [&](int i) {
      sums[i].assign(c, 0.0);
      sqs[i].assign(c, 0.0);
      for (int ch = 0; ch < c; ++ch) {
        const T* p = outs[i].data() + std::size_t(ch) * plane;
        double s = 0.0, q = 0.0;
        for (std::size_t j = 0; j < plane; ++j) {
          s += double(p[j]);
          q += double(p[j]) * double(p[j]);
        }
        sums[i][ch] = s;
        sqs[i][ch] = q;
      }
    });
    const double count = double(n) * double(plane);
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, q = 0.0;
      for (int i = 0; i < n; ++i) {  // serial, item order
        s += sums[i][ch];
        q += sqs[i][ch];
      }
      const double m = s / count;
      const double var = std::max(0.0, q / count - m * m);
      L.run_mean[std::size_t(ch)] =
          T((1.0 - kNormMomentum) * double(L.run_mean[std::size_t(ch)]) +
            kNormMomentum * m);
      L.run_var[std::size_t(ch)] =
          T((1.0 - kNormMomentum) * double(L.run_var[std::size_t(ch)]) +
            kNormMomentum * var);
    }
  }

  FeatureMap<T> to_hwd(const T* chw) const {
    const Layer& L = layers_.back();
    FeatureMap<T> fm(L.hout, L.wout, L.spec.out_channels);
    fm.geom = geom_;
    const std::size_t plane = std::size_t(L.hout) * L.wout;
    for (int d = 0; d < fm.depth; ++d)
      for (std::size_t j = 0; j < plane; ++j)
        fm.v[j * fm.depth + d] = chw[std::size_t(d) * plane + j];
    return fm;
  }

  std::vector<T> hwd_to_chw(const T* hwd) const {
    const Layer& L = layers_.back();
    const std::size_t plane = std::size_t(L.hout) * L.wout;
    std::vector<T> chw(std::size_t(L.spec.out_channels) * plane);
    for (int d = 0; d < L.spec.out_channels; ++d)
      for (std::size_t j = 0; j < plane; ++j)
        chw[std::size_t(d) * plane + j] = hwd[j * L.spec.out_channels + d];
    return chw;
  }

  BackboneConfig cfg_;
  RFGeometry geom_;
  std::vector<Layer> layers_;
  bool norm_identity_ = false;
};

}  // namespace protobag
