// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/threshold.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gaitsep/metrics.hpp"
#include "gaitsep/tensor.hpp"

namespace gaitsep {

double window_magnitude(std::span<const double> samples) {
  require(!samples.empty(), "window_magnitude: empty window");
  require(samples.size() % kAxes == 0, "window_magnitude: sample count is not a multiple of 3");
  double sum = 0.0;
  for (double v : samples) sum += v * v;
  return sum;
}

double window_magnitude(const Window& window, MagnitudeMode mode) {
  if (mode == MagnitudeMode::zero_centered) return window_magnitude(window.data);
  require(window.has_axis_mean, "window_magnitude: raw mode needs windows that carry their axis means");
  double sum = 0.0;
  for (std::size_t t = 0; t < kWindowLength; ++t)
    for (std::size_t a = 0; a < kAxes; ++a) {
      const double v = window.at(t, a) + window.axis_mean[a];
      sum += v * v;
    }
  return sum;
}

ThresholdModel fit_threshold_magnitudes(std::span<const double> magnitudes, std::span<const int> labels) {
  if (magnitudes.size() != labels.size()) throw std::invalid_argument("fit_threshold: length mismatch");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size())
    throw std::invalid_argument("fit_threshold: both classes must be present");

  std::vector<std::size_t> order(magnitudes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return magnitudes[a] < magnitudes[b]; });

  // Sweep candidates in increasing order; everything strictly above tau is gait.
  // Start at tau = 0: all windows with A > 0 are predicted gait.
  ConfusionCounts c;
  std::size_t i = 0;
  for (; i < order.size() && magnitudes[order[i]] <= 0.0; ++i) (labels[order[i]] == 1 ? c.fn : c.tn) += 1;
  for (std::size_t j = i; j < order.size(); ++j) (labels[order[j]] == 1 ? c.tp : c.fp) += 1;

  ThresholdModel best{0.0, f1_or_zero(c)};
  while (i < order.size()) {
    const double m = magnitudes[order[i]];
    for (; i < order.size() && magnitudes[order[i]] == m; ++i) {
      if (labels[order[i]] == 1) {
        --c.tp;
        ++c.fn;
      } else {
        --c.fp;
        ++c.tn;
      }
    }
    const double tau = i < order.size() ? 0.5 * (m + magnitudes[order[i]]) : m + 1.0;
    const double f1 = f1_or_zero(c);
    if (f1 > best.fit_f1) best = {tau, f1};
  }
  return best;
}

ThresholdModel fit_threshold(std::span<const Window> windows, std::span<const std::size_t> indices,
                             MagnitudeMode mode) {
  std::vector<double> mags;
  std::vector<int> labels;
  mags.reserve(indices.size());
  labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    mags.push_back(window_magnitude(windows[idx], mode));
    labels.push_back(static_cast<int>(windows[idx].label));
  }
  ThresholdModel m = fit_threshold_magnitudes(mags, labels);
  m.mode = mode;
  return m;
}

Label classify(const Window& window, const ThresholdModel& model) {
  return classify_magnitude(window_magnitude(window, model.mode), model);
}

std::string serialize(const ThresholdModel& model) {
  std::ostringstream out;
  out.precision(17);
  out << "tau=" << model.tau << " fit_f1=" << model.fit_f1;
  return out.str();
}

ThresholdModel parse_threshold_model(const std::string& text) {
  std::istringstream in(text);
  std::string a, b, extra;
  if (!(in >> a >> b) || (in >> extra) || a.rfind("tau=", 0) != 0 || b.rfind("fit_f1=", 0) != 0)
    throw std::invalid_argument("threshold model: expected 'tau=<decimal> fit_f1=<decimal>'");
  auto number = [](std::string_view s) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
      throw std::invalid_argument("threshold model: bad number '" + std::string(s) + "'");
    return v;
  };
  ThresholdModel m;
  m.tau = number(std::string_view(a).substr(4));
  m.fit_f1 = number(std::string_view(b).substr(7));
  if (m.tau < 0 || m.fit_f1 < 0 || m.fit_f1 > 1) throw std::invalid_argument("threshold model: value out of range");
  return m;
}

}  // namespace gaitsep
