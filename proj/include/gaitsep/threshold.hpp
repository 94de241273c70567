// SPDX-License-Identifier: Apache-2.0
//
// Fixed-threshold gait detector on the window energy statistic
// A = sum over samples of (ax^2 + ay^2 + az^2).
#pragma once

#include <span>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"

namespace gaitsep {

/// Windows are zero-centred by the pipeline. `raw` adds the removed per-axis
/// means back first (gravity-inclusive); it needs windows that still carry
/// their axis means.
enum class MagnitudeMode { zero_centered, raw };

struct ThresholdModel {
  double tau = 0.0;
  double fit_f1 = 0.0;
  MagnitudeMode mode = MagnitudeMode::zero_centered;
};

/// Sum of squared components over every sample. Throws ContractError on an
/// empty input or a length that is not a multiple of 3.
double window_magnitude(std::span<const double> samples);
double window_magnitude(const Window& window, MagnitudeMode mode = MagnitudeMode::zero_centered);

/// Exhaustive F1 maximisation over {0, midpoints of consecutive distinct
/// magnitudes, max + 1}; rule A > tau means gait; ties go to the smallest tau.
/// Throws std::invalid_argument unless both classes are present.
ThresholdModel fit_threshold_magnitudes(std::span<const double> magnitudes, std::span<const int> labels);
ThresholdModel fit_threshold(std::span<const Window> windows, std::span<const std::size_t> indices,
                             MagnitudeMode mode = MagnitudeMode::zero_centered);

Label classify(const Window& window, const ThresholdModel& model);
inline Label classify_magnitude(double magnitude, const ThresholdModel& model) {
  return magnitude > model.tau ? Label::gait : Label::non_gait;
}

/// `tau=<decimal> fit_f1=<decimal>` with round-trip precision.
std::string serialize(const ThresholdModel& model);
/// Throws std::invalid_argument on malformed text.
ThresholdModel parse_threshold_model(const std::string& text);

}  // namespace gaitsep
