#pragma once

#include <string>
#include <vector>

#include "protobag/config.hpp"
#include "protobag/data.hpp"
#include "protobag/losses.hpp"
#include "protobag/model.hpp"
#include "protobag/prototypes.hpp"

namespace protobag {

struct EpochLog {
  int epoch = 0;           // global, 1-based
  std::string stage;       // warm | joint | last
  LossTerms loss;          // epoch means
  double val_auc = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  std::vector<PushReport> pushes;
  int best_epoch = -1;       // last-layer epoch whose head was kept
  double best_val_auc = 0.0;
  std::vector<float> train_mean, train_std;
};

struct EvalResult {
  double accuracy = 0.0;
  double auc = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::vector<double> probs;  // disease-class probability per sample
  std::vector<int> predicted;
};

// Staged loop: warm-up (backbone frozen), joint, prototype projection every
// push_period joint epochs and after the last one, then head-only tuning
// with the best-validation-AUC head retained. Deterministic for a fixed
// config and seed, regardless of thread count.
TrainResult train(const ExperimentConfig& cfg, const Dataset& train_set,
                  const Dataset& val_set);

EvalResult evaluate_classification(const Model<float>& model, const Dataset& data,
                                   int threads);

// Renders the epoch log as CSV (epoch, stage, loss terms, val metrics).
std::string metrics_csv(const std::vector<EpochLog>& log);

}  // namespace protobag
