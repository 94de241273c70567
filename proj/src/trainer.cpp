// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gaitsep/metrics.hpp"

namespace gaitsep {

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(learning_rate, "learning_rate");
  positive(epsilon, "epsilon");
  positive(min_learning_rate, "min_learning_rate");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(rlrop_factor > 0.0 && rlrop_factor < 1.0)) throw std::invalid_argument("rlrop_factor must lie in (0, 1)");
  if (!(class_balance_beta > 0.0 && class_balance_beta < 1.0))
    throw std::invalid_argument("class_balance_beta must lie in (0, 1)");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
  if (rlrop_patience < 1) throw std::invalid_argument("rlrop_patience must be >= 1");
  if (threshold_sweep_points < 2) throw std::invalid_argument("threshold_sweep_points must be >= 2");
}

ClassWeights compute_class_weights(std::uint64_t n0, std::uint64_t n1, double beta) {
  if (n0 == 0 || n1 == 0) throw std::invalid_argument("compute_class_weights: both classes need at least one sample");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("compute_class_weights: beta must lie in (0, 1)");
  // 1 - beta^n = -expm1(n ln beta), exact for large n where beta^n underflows.
  const double log_beta = std::log(beta);
  auto effective = [&](std::uint64_t n) { return -std::expm1(static_cast<double>(n) * log_beta) / (1.0 - beta); };
  const double w0 = 1.0 / effective(n0);
  const double w1 = 1.0 / effective(n1);
  const double d0 = static_cast<double>(n0);
  const double d1 = static_cast<double>(n1);
  const double mean = (w0 * d0 + w1 * d1) / (d0 + d1);
  return {w0 / mean, w1 / mean, n0, n1, beta};
}

OptimizerState make_optimizer_state(ModelParams& params) {
  OptimizerState s;
  for (const auto& t : trainable_tensors(params)) {
    s.m.emplace_back(t.values.size(), 0.0);
    s.v.emplace_back(t.values.size(), 0.0);
  }
  return s;
}

void adamw_step(ModelParams& params, ModelParams& grads, OptimizerState& state, const TrainConfig& config,
                double current_lr) {
  auto p = trainable_tensors(params);
  auto g = trainable_tensors(grads);
  if (p.size() != g.size() || p.size() != state.m.size() || p.size() != state.v.size())
    throw ContractError("adamw_step: parameter, gradient and state layouts differ");
  if (state.t == std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("adamw_step: step counter overflow");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto theta = p[i].values;
    auto grad = g[i].values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (theta.size() != grad.size() || theta.size() != m.size())
      throw ContractError("adamw_step: tensor " + std::to_string(i) + " size mismatch");
    const bool decay = decays(p[i].role) && config.weight_decay != 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
      theta[j] -= current_lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.epsilon);
      if (decay) theta[j] -= current_lr * config.weight_decay * theta[j];
    }
  }
}

TrainingError::TrainingError(std::size_t epoch_, std::size_t batch_, std::string layer_, const std::string& what)
    : std::runtime_error(what), epoch(epoch_), batch(batch_), layer(std::move(layer_)) {}

std::vector<double> predict_gait(const ModelSpec& spec, const ModelParams& params, std::span<const Window> windows,
                                 std::span<const std::size_t> indices) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); i += kChunk) {
    const auto chunk = indices.subspan(i, std::min(kChunk, indices.size() - i));
    const Matrix probs = predict(spec, params, to_batch(windows, chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) out.push_back(probs(r, 1));
  }
  return out;
}

ThresholdCalibration calibrate_threshold(std::span<const double> p_gait, std::span<const int> labels,
                                         std::size_t points) {
  if (p_gait.size() != labels.size()) throw std::invalid_argument("calibrate_threshold: length mismatch");
  if (points < 2) throw std::invalid_argument("calibrate_threshold: need at least two grid points");
  const auto positives = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size()) return {0.5, 0.0, true};

  // Sorted ascending; every score at or above tau is predicted gait.
  std::vector<std::size_t> order(p_gait.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_gait[a] < p_gait[b]; });
  std::vector<std::uint64_t> pos_below(order.size() + 1, 0);  // positives among the first i sorted
  for (std::size_t i = 0; i < order.size(); ++i) pos_below[i + 1] = pos_below[i] + (labels[order[i]] == 1 ? 1 : 0);

  ThresholdCalibration best{0.0, -1.0, false};
  std::size_t cut = 0;  // first sorted index with score >= tau
  for (std::size_t k = 0; k < points; ++k) {
    const double tau = static_cast<double>(k) / static_cast<double>(points - 1);
    while (cut < order.size() && p_gait[order[cut]] < tau) ++cut;
    ConfusionCounts c;
    c.tp = positives - pos_below[cut];
    c.fn = pos_below[cut];
    c.fp = (order.size() - cut) - c.tp;
    c.tn = cut - c.fn;
    const double f1 = f1_or_zero(c);
    if (f1 > best.f1) best = {tau, f1, false};
  }
  return best;
}

namespace {

constexpr std::size_t kChunkRows = 32;

// Each step allocates and frees multi-megabyte activation buffers. With
// glibc's defaults those go straight back to the kernel and every step pays
// the page faults again, which costs about as much as the arithmetic.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

std::string first_nonfinite_layer(const ModelSpec& spec, const ForwardCache& cache) {
  auto bad = [](std::span<const double> v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return !std::isfinite(x); });
  };
  if (bad(cache.input.data)) return "input";
  for (std::size_t i = 0; i < cache.outputs.size() && i < spec.layers.size(); ++i)
    if (bad(cache.outputs[i].data)) return spec.layers[i].name;
  if (bad(cache.logits.data)) return "logits";
  return "loss";
}

bool all_finite(ModelParams& params) {
  for (const auto& t : trainable_tensors(params))
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

CalibratedModel train(const ModelSpec& spec, std::span<const Window> windows, const SplitSet& split,
                      const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  keep_freed_memory();
  if (split.train.empty() || split.validation.empty())
    throw std::invalid_argument("train: split needs non-empty train and validation portions");
  const std::vector<int> train_labels = labels_of(windows, split.train);
  const std::vector<int> val_labels = labels_of(windows, split.validation);
  const auto n1 = static_cast<std::uint64_t>(std::count(train_labels.begin(), train_labels.end(), 1));
  const auto v1 = static_cast<std::size_t>(std::count(val_labels.begin(), val_labels.end(), 1));
  if (n1 == 0 || n1 == train_labels.size()) throw std::invalid_argument("train: training portion has one class");
  if (v1 == 0 || v1 == val_labels.size()) throw std::invalid_argument("train: validation portion has one class");

  CalibratedModel result;
  result.spec = spec;
  result.class_weights = compute_class_weights(train_labels.size() - n1, n1, config.class_balance_beta);
  ModelParams params = init_params(spec, config.seed);
  OptimizerState opt = make_optimizer_state(params);

  ModelParams best = params;
  double best_ap = -std::numeric_limits<double>::infinity();
  double lr = config.learning_rate;
  std::size_t stop_wait = 0;
  std::size_t plateau_wait = 0;

  const bool has_batchnorm = std::any_of(spec.layers.begin(), spec.layers.end(),
                                         [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
  std::vector<std::size_t> order(split.train);
  std::vector<std::size_t> batch_idx;
  std::vector<int> batch_labels;
  std::vector<double> batch_weights;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(config.seed, {0x5f1eu, options.fold_index, epoch});
    Rng dropout_rng = Rng::derive(config.seed, {0xd409u, options.fold_index, epoch});
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_no) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(start + n));
      batch_labels = labels_of(windows, batch_idx);
      batch_weights.resize(n);
      for (std::size_t i = 0; i < n; ++i) batch_weights[i] = result.class_weights[batch_labels[i]];

      // Without batch-norm every sample is independent, so the step can run
      // in cache-sized chunks whose gradients are summed; batch-norm needs
      // the whole mini-batch for its statistics.
      const std::size_t chunk = has_batchnorm ? n : std::min(n, kChunkRows);
      ModelParams grads;
      double loss = 0.0;
      for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
        const std::size_t cn = std::min(chunk, n - c0);
        const std::span<const std::size_t> idx(batch_idx.data() + c0, cn);
        const std::span<const int> lab(batch_labels.data() + c0, cn);
        const std::span<const double> wts(batch_weights.data() + c0, cn);
        ForwardResult fr = forward(spec, params, to_batch(windows, idx), Mode::train, &dropout_rng);
        const double part = batch_crossentropy(fr.probs, lab, wts);
        if (!std::isfinite(part)) {
          const std::string layer = first_nonfinite_layer(spec, fr.cache);
          throw TrainingError(epoch, batch_no, layer,
                              "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_no) + " (first non-finite activation: " + layer + ")");
        }
        const double share = static_cast<double>(cn) / static_cast<double>(n);
        loss += part * share;
        Matrix grad_logits = crossentropy_grad_logits(fr.probs, lab, wts);
        for (double& g : grad_logits.data) g *= share;
        ModelParams part_grads = backward(spec, params, fr.cache, grad_logits);
        if (c0 == 0) {
          grads = std::move(part_grads);
        } else {
          auto dst = trainable_tensors(grads);
          auto src = trainable_tensors(part_grads);
          for (std::size_t t = 0; t < dst.size(); ++t)
            for (std::size_t j = 0; j < dst[t].values.size(); ++j) dst[t].values[j] += src[t].values[j];
        }
        if (has_batchnorm) commit_running_stats(params, fr.cache);
      }
      loss_sum += loss * static_cast<double>(n);
      adamw_step(params, grads, opt, config, lr);
      if (!all_finite(params))
        throw TrainingError(epoch, batch_no, "parameters",
                            "non-finite parameters after update at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_no));
    }

    const std::vector<double> scores = predict_gait(spec, params, windows, split.validation);
    const double ap = average_precision(scores, val_labels);
    const EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), ap, lr};
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (ap > best_ap) {
      best_ap = ap;
      best = params;
      result.best_epoch = epoch;
      stop_wait = 0;
      plateau_wait = 0;
    } else {
      ++stop_wait;
      ++plateau_wait;
      if (stop_wait >= config.early_stop_patience) break;
      if (plateau_wait >= config.rlrop_patience && lr > config.min_learning_rate) {
        lr = std::max(lr * config.rlrop_factor, config.min_learning_rate);
        plateau_wait = 0;
      }
    }
  }

  result.params = std::move(best);
  const std::vector<double> scores = predict_gait(spec, result.params, windows, split.validation);
  const ThresholdCalibration cal = calibrate_threshold(scores, val_labels, config.threshold_sweep_points);
  result.tau_star = cal.tau_star;
  if (cal.single_class) result.warnings.emplace_back("validation has one class; tau* fixed at 0.5");
  return result;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_pr_auc,learning_rate\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_pr_auc, r.learning_rate);
    out << buf;
  }
}

}  // namespace gaitsep
