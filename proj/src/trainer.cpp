#include "protobag/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "protobag/checkpoint.hpp"
#include "protobag/metrics.hpp"
#include "protobag/optim.hpp"
#include "protobag/rng.hpp"
#include "protobag/util.hpp"

namespace protobag {

namespace {

enum class Stage { warm, joint, last };

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::warm: return "warm";
    case Stage::joint: return "joint";
    default: return "last";
  }
}

struct ItemResult {
  std::vector<float> dhead;
  std::vector<float> dprotos;
  Backbone<float>::Grads backbone;
  double ce = 0.0, clst = 0.0, sep_raw = 0.0, l1s = 0.0;
};

struct GradBuffers {
  Backbone<float>::Grads backbone;
  std::vector<float> protos;
  std::vector<float> head;
};

// Epoch item order: plain shuffle, or weighted resample when class-balanced
// sampling is on.
std::vector<int> epoch_order(const Dataset& data, bool weighted, Rng& rng) {
  const int n = int(data.size());
  std::vector<int> order((std::size_t)n);
  if (!weighted) {
    for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[rng.below(std::uint64_t(i + 1))]);
    return order;
  }
  std::vector<long long> per_class(2, 0);
  for (const LabeledSample& s : data) ++per_class[std::size_t(s.label)];
  std::vector<double> cum((std::size_t)n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += 1.0 / double(per_class[std::size_t(data[std::size_t(i)].label)]);
    cum[std::size_t(i)] = acc;
  }
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    order[std::size_t(i)] = int(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (order[std::size_t(i)] >= n) order[std::size_t(i)] = n - 1;
  }
  return order;
}

// One optimization pass over `order`. Returns the epoch-mean loss terms.
LossTerms run_epoch(Model<float>& model, const ExperimentConfig& cfg,
                    const std::vector<ImageF>& images,
                    const std::vector<int>& labels,
                    const std::vector<int>& order, Stage stage,
                    Adam<float>& opt, GradBuffers& grads, int threads,
                    int epoch) {
  const LossWeights& lw = cfg.loss;
  const int n = int(order.size());
  const int bsz = cfg.train.batch_size;
  const int b = model.bank.count();
  const int per_class = model.bank.per_class;
  const int dim = model.bank.dim;
  const double radius = cfg.train.prototype_norm_radius > 0
                            ? cfg.train.prototype_norm_radius
                            : 10.0 * std::sqrt(double(dim));
  LossTerms epoch_terms;
  double seen = 0.0;

  for (int start = 0; start < n; start += bsz) {
    const int bn = std::min(bsz, n - start);
    std::vector<const ImageF*> batch((std::size_t)bn);
    for (int i = 0; i < bn; ++i)
      batch[std::size_t(i)] = &images[std::size_t(order[std::size_t(start + i)])];

    Backbone<float>::Cache cache;
    std::vector<FeatureMap<float>> fms((std::size_t)bn);
    if (stage == Stage::last) {
      parallel_for(bn, threads, [&](int i) {
        fms[std::size_t(i)] = model.backbone.features(*batch[std::size_t(i)]);
      });
    } else {
      model.backbone.forward_batch(batch, /*update_stats=*/true, cache, threads);
      for (int i = 0; i < bn; ++i)
        fms[std::size_t(i)] = model.backbone.feature_map(cache, i);
    }

    opt.zero_grad();
    std::vector<ItemResult> items((std::size_t)bn);
    const double inv_b = 1.0 / double(bn);
    parallel_for(bn, threads, [&](int i) {
      ItemResult& it = items[std::size_t(i)];
      const int label = labels[std::size_t(order[std::size_t(start + i)])];
      const FeatureMap<float>& fm = fms[std::size_t(i)];
      const int cells = fm.rows * fm.cols;
      MapStack<float> dist = squared_distance_maps(fm, model.bank);
      MapStack<float> sim = similarity_maps(dist, model.epsilon);
      std::vector<float> pooled((std::size_t)b);
      std::vector<std::vector<int>> topk((std::size_t)b);
      for (int j = 0; j < b; ++j) {
        topk[std::size_t(j)] = topk_cells(sim.map(j), cells, model.k);
        double s = 0.0;
        for (int cell : topk[std::size_t(j)]) s += double(sim.map(j)[cell]);
        pooled[std::size_t(j)] = float(s / double(topk[std::size_t(j)].size()));
      }
      const std::vector<float> logits = model.head.forward(pooled);
      std::vector<float> probs;
      it.ce = cross_entropy(logits, label, &probs);
      it.l1s = l1_similarity(sim);

      std::vector<float> dlogits(probs);
      dlogits[std::size_t(label)] -= 1.0f;
      for (float& g : dlogits) g = float(double(g) * inv_b);
      it.dhead.assign(model.head.w.size(), 0.0f);
      std::vector<float> dpooled;
      model.head.backward(pooled, dlogits, it.dhead, dpooled);

      const MinHit chit = cluster_hit(dist, label, per_class);
      const MinHit sehit = separation_hit(dist, label, per_class);
      it.clst = chit.value;
      it.sep_raw = sehit.value;
      if (stage == Stage::last) return;  // head-only: no prototype grads

      // dL/dsim: top-k routing of the pooled-score grads plus the sparsity
      // term on every entry (similarities are positive, |s| = s)
      MapStack<float> ddist(b, fm.rows, fm.cols);
      const double l1s_coef =
          lw.l1_similarity * inv_b / (double(b) * double(cells));
      for (int j = 0; j < b; ++j) {
        const float* dmap = dist.map(j);
        float* dd = ddist.map(j);
        for (int cell = 0; cell < cells; ++cell)
          dd[cell] = float(l1s_coef *
                           double(similarity_ddist(dmap[cell], model.epsilon)));
        const double dtop = double(dpooled[std::size_t(j)]) /
                            double(topk[std::size_t(j)].size());
        for (int cell : topk[std::size_t(j)])
          dd[cell] += float(dtop *
                            double(similarity_ddist(dmap[cell], model.epsilon)));
      }
      // cluster pulls the nearest own-class prototype in, separation pushes
      // the nearest other-class prototype out
      ddist.map(chit.proto)[chit.cell] += float(lw.clst * inv_b);
      ddist.map(sehit.proto)[sehit.cell] -= float(lw.sep * inv_b);

      it.dprotos.assign(std::size_t(b) * dim, 0.0f);
      std::vector<float> dfm;
      if (stage == Stage::joint) dfm.assign(fm.v.size(), 0.0f);
      for (int cell = 0; cell < cells; ++cell) {
        const float* z = fm.v.data() + std::size_t(cell) * dim;
        float* dz = stage == Stage::joint
                        ? dfm.data() + std::size_t(cell) * dim
                        : nullptr;
        for (int j = 0; j < b; ++j) {
          const float c = ddist.map(j)[cell];
          if (c == 0.0f) continue;
          const float* p = model.bank.vec(j);
          float* dp = it.dprotos.data() + std::size_t(j) * dim;
          for (int d = 0; d < dim; ++d) {
            const float diff = p[d] - z[d];
            dp[d] += 2.0f * c * diff;
            if (dz) dz[d] -= 2.0f * c * diff;
          }
        }
      }
      if (stage == Stage::joint) {
        it.backbone.resize_like(model.backbone);
        model.backbone.backward_item(cache, i, dfm.data(), it.backbone);
      }
    });

    // serial reduction in item order keeps results thread-count independent
    LossTerms terms;
    for (int i = 0; i < bn; ++i) {
      const ItemResult& it = items[std::size_t(i)];
      terms.ce += it.ce * inv_b;
      terms.clst += it.clst * inv_b;
      terms.sep -= it.sep_raw * inv_b;
      terms.l1s += it.l1s * inv_b;
      for (std::size_t j = 0; j < it.dhead.size(); ++j)
        grads.head[j] += it.dhead[j];
      if (stage != Stage::last) {
        for (std::size_t j = 0; j < it.dprotos.size(); ++j)
          grads.protos[j] += it.dprotos[j];
        if (stage == Stage::joint) grads.backbone.add(it.backbone);
      }
    }
    terms.l1c = model.head.l1();
    terms.diss = dissimilarity(model.bank);
    terms.total = combine_losses(terms, lw);
    if (!std::isfinite(terms.total))
      throw DataError("training diverged at epoch " + std::to_string(epoch) +
                      " (" + stage_name(stage) + "): " + terms.to_string());

    model.head.add_l1_grad(float(lw.l1_classifier), grads.head);
    if (stage != Stage::last && lw.dissimilarity != 0.0)
      add_dissimilarity_grad(model.bank, float(-lw.dissimilarity), grads.protos);

    // route the flat prototype grad buffer into the bank before stepping
    opt.step();
    if (stage != Stage::last) clamp_prototype_norms(model.bank, radius);

    const double w = double(bn);
    epoch_terms.ce += terms.ce * w;
    epoch_terms.clst += terms.clst * w;
    epoch_terms.sep += terms.sep * w;
    epoch_terms.l1c += terms.l1c * w;
    epoch_terms.l1s += terms.l1s * w;
    epoch_terms.diss += terms.diss * w;
    seen += w;
  }
  if (seen > 0) {
    epoch_terms.ce /= seen;
    epoch_terms.clst /= seen;
    epoch_terms.sep /= seen;
    epoch_terms.l1c /= seen;
    epoch_terms.l1s /= seen;
    epoch_terms.diss /= seen;
    epoch_terms.total = combine_losses(epoch_terms, cfg.loss);
  }
  return epoch_terms;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const Dataset& train_set,
                  const Dataset& val_set) {
  validate_config(cfg);
  if (train_set.empty()) throw DataError("train: empty training set");
  std::vector<long long> per_class(std::size_t(cfg.model.classes), 0);
  for (const LabeledSample& s : train_set) {
    if (s.label < 0 || s.label >= cfg.model.classes)
      throw DataError("train: label out of range in training set");
    ++per_class[std::size_t(s.label)];
  }
  for (int c = 0; c < cfg.model.classes; ++c)
    if (per_class[std::size_t(c)] == 0)
      throw DataError("train: class " + std::to_string(c) +
                      " has no training samples");

  const int threads = cfg.deterministic ? 1 : resolve_threads(cfg.threads);
  TrainResult result;
  result.model = build_model(cfg);
  Model<float>& model = result.model;
  dataset_mean_std(train_set, result.train_mean, result.train_std);
  model.input_mean = result.train_mean;
  model.input_std = result.train_std;

  std::vector<ImageF> images(train_set.size());
  std::vector<int> labels(train_set.size());
  std::vector<std::string> ids(train_set.size());
  parallel_for(int(train_set.size()), threads, [&](int i) {
    images[std::size_t(i)] = model.normalize(train_set[std::size_t(i)].image);
    labels[std::size_t(i)] = train_set[std::size_t(i)].label;
    ids[std::size_t(i)] = train_set[std::size_t(i)].id;
  });

  GradBuffers grads;
  grads.backbone.resize_like(model.backbone);
  grads.protos.assign(model.bank.vectors.size(), 0.0f);
  grads.head.assign(model.head.w.size(), 0.0f);

  auto make_optimizer = [&](Stage stage) {
    Adam<float> opt;
    if (stage == Stage::joint) {
      auto params = model.backbone.param_arrays();
      for (std::size_t i = 0; i < params.size(); ++i) {
        const int layer = int(i / 2);
        std::vector<float>* g = (i % 2 == 0) ? &grads.backbone.w[std::size_t(layer)]
                                             : &grads.backbone.b[std::size_t(layer)];
        opt.add(params[i].second, g, cfg.train.lr_backbone);
      }
    }
    if (stage != Stage::last)
      opt.add(&model.bank.vectors, &grads.protos, cfg.train.lr_prototypes);
    opt.add(&model.head.w, &grads.head, cfg.train.lr_head);
    return opt;
  };

  auto encode = [&](long long i) {
    return model.backbone.features(images[std::size_t(i)]);
  };
  auto validate = [&](EpochLog& lg) {
    if (val_set.empty()) {
      lg.val_auc = std::numeric_limits<double>::quiet_NaN();
      lg.val_accuracy = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const EvalResult ev = evaluate_classification(model, val_set, threads);
    lg.val_auc = ev.auc;
    lg.val_accuracy = ev.accuracy;
  };

  int epoch = 0;
  auto run_stage = [&](Stage stage, int epochs, Adam<float>& opt) {
    for (int e = 0; e < epochs; ++e) {
      ++epoch;
      Rng rng = Rng::stream(cfg.seed, 1000000 + std::uint64_t(epoch));
      const std::vector<int> order =
          epoch_order(train_set, cfg.train.class_weighted_sampling, rng);
      EpochLog lg;
      lg.epoch = epoch;
      lg.stage = stage_name(stage);
      lg.loss = run_epoch(model, cfg, images, labels, order, stage, opt, grads,
                          threads, epoch);
      validate(lg);
      result.log.push_back(lg);
      if (stage == Stage::joint) {
        const bool period_hit = cfg.train.push_period > 0 &&
                                (e + 1) % cfg.train.push_period == 0;
        if (period_hit || e + 1 == epochs) {
          result.pushes.push_back(push_prototypes(model.bank, encode, labels,
                                                  ids, model.epsilon));
        }
      }
    }
  };

  {
    Adam<float> opt = make_optimizer(Stage::warm);
    run_stage(Stage::warm, cfg.train.epochs_warm, opt);
  }
  {
    Adam<float> opt = make_optimizer(Stage::joint);
    run_stage(Stage::joint, cfg.train.epochs_joint, opt);
  }
  {
    // head-only tuning on top of the projected prototypes; keep the head
    // that scores the best validation AUC (the pre-tuning head competes too)
    Adam<float> opt = make_optimizer(Stage::last);
    std::vector<float> best_head = model.head.w;
    double best_auc = -1.0;
    int best_epoch = epoch;
    if (!val_set.empty() && cfg.train.epochs_last > 0) {
      const EvalResult ev = evaluate_classification(model, val_set, threads);
      if (std::isfinite(ev.auc)) best_auc = ev.auc;
    }
    for (int e = 0; e < cfg.train.epochs_last; ++e) {
      ++epoch;
      Rng rng = Rng::stream(cfg.seed, 1000000 + std::uint64_t(epoch));
      const std::vector<int> order =
          epoch_order(train_set, cfg.train.class_weighted_sampling, rng);
      EpochLog lg;
      lg.epoch = epoch;
      lg.stage = stage_name(Stage::last);
      lg.loss = run_epoch(model, cfg, images, labels, order, Stage::last, opt,
                          grads, threads, epoch);
      validate(lg);
      result.log.push_back(lg);
      if (!val_set.empty() && std::isfinite(lg.val_auc) && lg.val_auc > best_auc) {
        best_auc = lg.val_auc;
        best_head = model.head.w;
        best_epoch = epoch;
      }
    }
    if (cfg.train.epochs_last > 0 && !val_set.empty()) {
      model.head.w = best_head;
      result.best_epoch = best_epoch;
      result.best_val_auc = best_auc;
    } else {
      result.best_epoch = epoch;
      result.best_val_auc =
          result.log.empty() ? 0.0 : result.log.back().val_auc;
    }
  }
  return result;
}

EvalResult evaluate_classification(const Model<float>& model, const Dataset& data,
                                   int threads) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  EvalResult out;
  out.probs.resize(data.size());
  out.predicted.resize(data.size());
  std::vector<int> labels(data.size());
  parallel_for(int(data.size()), threads, [&](int i) {
    const Inference<float> inf = model.infer_raw(data[std::size_t(i)].image);
    out.probs[std::size_t(i)] = double(inf.probs[1]);
    out.predicted[std::size_t(i)] = inf.predicted;
    labels[std::size_t(i)] = data[std::size_t(i)].label;
  });
  out.accuracy = accuracy(out.predicted, labels);
  out.auc = auc_score(out.probs, labels);
  if (!std::isfinite(out.auc))
    std::cerr << "warning: AUC undefined, dataset holds a single class\n";
  out.recall = recall_pos(out.predicted, labels);
  out.precision = precision_pos(out.predicted, labels);
  return out;
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,stage,ce,clst,sep,l1c,l1s,diss,total,val_auc,val_accuracy\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    os << buf;
  };
  for (const EpochLog& lg : log) {
    os << lg.epoch << "," << lg.stage << ",";
    put(lg.loss.ce); os << ",";
    put(lg.loss.clst); os << ",";
    put(lg.loss.sep); os << ",";
    put(lg.loss.l1c); os << ",";
    put(lg.loss.l1s); os << ",";
    put(lg.loss.diss); os << ",";
    put(lg.loss.total); os << ",";
    put(lg.val_auc); os << ",";
    put(lg.val_accuracy); os << "\n";
  }
  return os.str();
}

}  // namespace protobag
