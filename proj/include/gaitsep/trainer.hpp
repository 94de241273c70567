// SPDX-License-Identifier: Apache-2.0
//
// Training protocol: AdamW with decoupled decay on kernels only,
// effective-number class weights, early stopping and plateau LR reduction on
// validation average precision, then a grid search for the decision threshold.
#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"
#include "gaitsep/model.hpp"

namespace gaitsep {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::size_t max_epochs = 300;
  std::size_t batch_size = 256;
  std::size_t early_stop_patience = 12;
  double rlrop_factor = 0.2;
  std::size_t rlrop_patience = 7;
  double min_learning_rate = 1e-5;
  double class_balance_beta = 0.999;
  std::uint64_t seed = 12;
  std::size_t threshold_sweep_points = 401;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ClassWeights {
  double w0 = 1.0;  // non-gait
  double w1 = 1.0;  // gait
  std::uint64_t n0 = 0;
  std::uint64_t n1 = 0;
  double beta = 0.999;

  double operator[](int label) const { return label == 1 ? w1 : w0; }
};

/// Inverse effective number E(n) = (1 - beta^n) / (1 - beta), normalised to
/// unit average weight over the n0 + n1 samples. Throws std::invalid_argument
/// on a zero count or beta outside (0, 1).
ClassWeights compute_class_weights(std::uint64_t n0, std::uint64_t n1, double beta);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// First/second moments shaped like the trainable tensors of `params`.
OptimizerState make_optimizer_state(ModelParams& params);

/// One AdamW update in place. Weight decay (theta -= lr * lambda * theta) is
/// applied after the Adam step and only to convolution and dense kernels.
void adamw_step(ModelParams& params, ModelParams& grads, OptimizerState& state, const TrainConfig& config,
                double current_lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_pr_auc = 0;
  double learning_rate = 0;
};

struct CalibratedModel {
  ModelSpec spec;
  ModelParams params;
  double tau_star = 0.5;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  ClassWeights class_weights;
  std::vector<std::string> warnings;
};

/// Raised on a non-finite loss; the message names epoch, batch and the first
/// layer whose activations went non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t epoch, std::size_t batch, std::string layer, const std::string& what);
  std::size_t epoch;
  std::size_t batch;
  std::string layer;
};

struct TrainOptions {
  std::size_t fold_index = 0;           // mixes into the shuffle and dropout streams
  std::function<void(const EpochRecord&)> on_epoch;  // progress hook, may be empty
};

/// Trains `spec` on split.train, monitors split.validation, restores the best
/// epoch's weights and calibrates tau*. Deterministic for fixed inputs.
CalibratedModel train(const ModelSpec& spec, std::span<const Window> windows, const SplitSet& split,
                      const TrainConfig& config, const TrainOptions& options = {});

/// Inference-mode gait probabilities for the selected windows, in chunks.
std::vector<double> predict_gait(const ModelSpec& spec, const ModelParams& params, std::span<const Window> windows,
                                 std::span<const std::size_t> indices);

struct ThresholdCalibration {
  double tau_star = 0.5;
  double f1 = 0.0;
  bool single_class = false;  // validation had one class; tau fixed at 0.5
};

/// Argmax over tau = k / (points - 1) of F1 for the rule p >= tau; ties go to
/// the smallest tau.
ThresholdCalibration calibrate_threshold(std::span<const double> p_gait, std::span<const int> labels,
                                         std::size_t points = 401);

/// `epoch,train_loss,val_pr_auc,learning_rate` with a header line.
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace gaitsep
