// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests and the acceptance runner: random
// fixtures, finite-difference gradient checks and small brute-force oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"
#include "gaitsep/layers.hpp"
#include "gaitsep/metrics.hpp"
#include "gaitsep/model.hpp"
#include "gaitsep/random.hpp"

namespace testing_support {

using namespace gaitsep;

inline Feature1D random_feature(Rng& rng, std::size_t batch, std::size_t length, std::size_t channels,
                                double scale = 1.0) {
  Feature1D f(batch, length, channels);
  for (auto& v : f.data) v = rng.normal(0.0, scale);
  return f;
}

inline void fill_normal(std::span<double> values, Rng& rng, double scale = 1.0) {
  for (auto& v : values) v = rng.normal(0.0, scale);
}

inline Window random_window(Rng& rng, double scale = 0.3) {
  Window w;
  for (auto& v : w.data) v = rng.normal(0.0, scale);
  zero_center(w.data);
  return w;
}

/// Finite-difference comparison error; gradients below `floor` in magnitude
/// are compared on an absolute scale of `floor`.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Randomises every parameter of a model, including batch-norm gamma/beta and
/// running statistics, so that no gradient path is trivially zero.
inline void perturb_params(ModelParams& params, Rng& rng) {
  for (auto& t : trainable_tensors(params))
    for (auto& v : t.values) {
      if (t.role == TensorRole::bn_gamma) v = rng.uniform(0.5, 1.5);
      else if (t.role == TensorRole::bias || t.role == TensorRole::bn_beta) v = rng.normal(0.0, 0.1);
    }
  for (auto& layer : params.layers)
    if (auto* bn = std::get_if<BatchNormParams>(&layer))
      for (std::size_t c = 0; c < bn->channels; ++c) {
        bn->running_mean[c] = rng.normal(0.0, 0.2);
        bn->running_var[c] = rng.uniform(0.5, 2.0);
      }
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coordinates = 0;
};

/// Full-model check of backward() against central differences of the mean
/// weighted cross-entropy in train mode. Dropout masks are held fixed by
/// reseeding the dropout stream for every evaluation.
inline GradCheckResult model_gradient_check(const ModelSpec& spec, ModelParams params, const Feature1D& batch,
                                            std::span<const int> labels, std::size_t samples, std::uint64_t seed,
                                            double step = 1e-6) {
  const std::vector<double> weights{0.7, 1.6};
  std::vector<double> sample_w;
  for (int l : labels) sample_w.push_back(weights[static_cast<std::size_t>(l)]);

  auto loss_of = [&](const ModelParams& p) {
    Rng drop(seed ^ 0xd40d);
    const auto r = forward(spec, p, batch, Mode::train, &drop);
    return batch_crossentropy(r.probs, labels, sample_w);
  };

  Rng drop(seed ^ 0xd40d);
  const auto fw = forward(spec, params, batch, Mode::train, &drop);
  const auto grad_logits = crossentropy_grad_logits(fw.probs, labels, sample_w);
  ModelParams grads = backward(spec, params, fw.cache, grad_logits);

  auto p_tensors = trainable_tensors(params);
  auto g_tensors = trainable_tensors(grads);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < p_tensors.size(); ++t)
    for (std::size_t i = 0; i < p_tensors[t].values.size(); ++i) coords.emplace_back(t, i);
  Rng pick(seed);
  pick.shuffle(std::span(coords));
  if (coords.size() > samples) coords.resize(samples);

  GradCheckResult res;
  for (const auto& [t, i] : coords) {
    double& v = p_tensors[t].values[i];
    const double orig = v;
    v = orig + step;
    const double lp = loss_of(params);
    v = orig - step;
    const double lm = loss_of(params);
    v = orig;
    const double numeric = (lp - lm) / (2.0 * step);
    res.max_rel_error = std::max(res.max_rel_error, relative_error(g_tensors[t].values[i], numeric));
    ++res.coordinates;
  }
  return res;
}

/// Metrics recomputed straight from the textbook definitions.
struct FormulaMetrics {
  double acc, tnr, tpr, ppv, f1, mcc, gm, kappa;
  bool ppv_ok, tpr_ok, tnr_ok, f1_ok, mcc_ok, gm_ok, kappa_ok;
};

inline FormulaMetrics formula_metrics(double tp, double tn, double fp, double fn) {
  FormulaMetrics m{};
  const double n = tp + tn + fp + fn;
  m.acc = (tp + tn) / n;
  m.ppv_ok = tp + fp > 0;
  m.tpr_ok = tp + fn > 0;
  m.tnr_ok = tn + fp > 0;
  if (m.ppv_ok) m.ppv = tp / (tp + fp);
  if (m.tpr_ok) m.tpr = tp / (tp + fn);
  if (m.tnr_ok) m.tnr = tn / (tn + fp);
  m.f1_ok = m.ppv_ok && m.tpr_ok && (m.ppv + m.tpr) > 0;
  if (m.f1_ok) m.f1 = 2 * m.ppv * m.tpr / (m.ppv + m.tpr);
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  m.mcc_ok = a > 0 && b > 0 && c > 0 && d > 0;
  if (m.mcc_ok) m.mcc = (tp * tn - fp * fn) / (std::sqrt(a) * std::sqrt(b) * std::sqrt(c) * std::sqrt(d));
  m.gm_ok = m.tpr_ok && m.tnr_ok;
  if (m.gm_ok) m.gm = std::sqrt(m.tpr * m.tnr);
  // Chance agreement from the two marginals: P(both say gait) + P(both say non-gait).
  const double p_pred_pos = a / n, p_true_pos = b / n;
  const double pe = p_pred_pos * p_true_pos + (1 - p_pred_pos) * (1 - p_true_pos);
  m.kappa_ok = pe < 1.0;
  if (m.kappa_ok) m.kappa = (m.acc - pe) / (1 - pe);
  return m;
}

/// Average precision by enumerating every distinct threshold: for each cut
/// value s, recall and precision of "score >= s"; sum (R_i - R_{i-1}) P_i.
inline double brute_force_ap(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> cuts(scores.begin(), scores.end());
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double ap = 0, prev_r = 0;
  for (double s : cuts) {
    double tp = 0, sel = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= s) {
        ++sel;
        tp += labels[i] == 1;
      }
    const double r = tp / pos;
    ap += (r - prev_r) * (tp / sel);
    prev_r = r;
  }
  return ap;
}

inline double f1_of(std::span<const int> truth, std::span<const int> pred) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    tp += truth[i] == 1 && pred[i] == 1;
    fp += truth[i] == 0 && pred[i] == 1;
    fn += truth[i] == 1 && pred[i] == 0;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

/// Exhaustive threshold-detector fit: every candidate in {0, midpoints, max+1}
/// evaluated from scratch. Returns (best F1, smallest tau reaching it).
inline std::pair<double, double> brute_force_magnitude_fit(std::span<const double> mags, std::span<const int> labels) {
  std::vector<double> u(mags.begin(), mags.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> cand{0.0};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) cand.push_back((u[i] + u[i + 1]) / 2);
  cand.push_back(u.back() + 1.0);
  std::sort(cand.begin(), cand.end());
  double best = -1, best_tau = 0;
  for (double tau : cand) {
    std::vector<int> pred;
    for (double a : mags) pred.push_back(a > tau ? 1 : 0);
    const double f = f1_of(labels, pred);
    if (f > best) {
      best = f;
      best_tau = tau;
    }
  }
  return {best, best_tau};
}

/// Exhaustive tau* sweep over k / (points - 1), rule p >= tau.
inline std::pair<double, double> brute_force_grid(std::span<const double> p, std::span<const int> labels,
                                                  std::size_t points = 401) {
  double best = -1, best_tau = 0;
  for (std::size_t k = 0; k < points; ++k) {
    const double tau = static_cast<double>(k) / static_cast<double>(points - 1);
    std::vector<int> pred;
    for (double x : p) pred.push_back(x >= tau ? 1 : 0);
    const double f = f1_of(labels, pred);
    if (f > best) {
      best = f;
      best_tau = tau;
    }
  }
  return {best, best_tau};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gaitsep-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
