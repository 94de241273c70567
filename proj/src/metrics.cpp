// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace gaitsep {
namespace {

Metric ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace

ConfusionCounts confusion(std::span<const int> truth, std::span<const int> predicted, int positive) {
  if (truth.size() != predicted.size())
    throw std::invalid_argument("confusion: " + std::to_string(truth.size()) + " labels vs " +
                                std::to_string(predicted.size()) + " predictions");
  if (truth.empty()) throw std::invalid_argument("confusion: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == positive;
    const bool p = predicted[i] == positive;
    if (t && p) ++c.tp;
    else if (!t && !p) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

MetricsReport compute_metrics(const ConfusionCounts& counts) {
  if (counts.total() == 0) throw std::invalid_argument("compute_metrics: no evaluated windows");
  const double tp = static_cast<double>(counts.tp);
  const double tn = static_cast<double>(counts.tn);
  const double fp = static_cast<double>(counts.fp);
  const double fn = static_cast<double>(counts.fn);
  const double n = tp + tn + fp + fn;

  MetricsReport r;
  r.accuracy = (tp + tn) / n;
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  if (r.precision && r.recall) r.f1 = ratio(2.0 * *r.precision * *r.recall, *r.precision + *r.recall);
  const double mcc_den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (mcc_den > 0.0) r.mcc = (tp * tn - fp * fn) / std::sqrt(mcc_den);
  if (r.recall && r.specificity) r.gm = std::sqrt(*r.recall * *r.specificity);
  const double pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n);
  if (pe != 1.0) r.cohen_kappa = (*r.accuracy - pe) / (1.0 - pe);
  return r;
}

double f1_or_zero(const ConfusionCounts& counts) {
  // 2TP / (2TP + FP + FN) equals the harmonic-mean form whenever it is defined.
  const double den = 2.0 * static_cast<double>(counts.tp) + static_cast<double>(counts.fp + counts.fn);
  return counts.tp == 0 || den == 0.0 ? 0.0 : 2.0 * static_cast<double>(counts.tp) / den;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: length mismatch");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size())
    throw std::invalid_argument("average_precision: both classes must be present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i, ++seen)
      if (labels[order[i]] == 1) ++tp;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

Aggregate aggregate(std::span<const Metric> values) {
  Aggregate a;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++a.defined;
    }
  if (a.defined == 0) return a;
  const double mean = sum / static_cast<double>(a.defined);
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  a.mean = mean;
  a.stddev = std::sqrt(ss / static_cast<double>(a.defined));
  return a;
}

std::string format_percent(const Metric& m) {
  if (!m) return "\xE2\x80\x94";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *m * 100.0);
  return buf;
}

}  // namespace gaitsep
