// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaitsep {

/// Positive class is gait (label 1).
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// A metric that may be undefined (division by zero). Never silently 0.
using Metric = std::optional<double>;

struct MetricsReport {
  Metric accuracy;
  Metric specificity;  // TNR
  Metric recall;       // TPR
  Metric precision;    // PPV
  Metric f1;
  Metric mcc;
  Metric gm;
  Metric cohen_kappa;
  Metric pr_auc;  // absent for the threshold detector
};

/// Labels and predictions are 0 (non-gait) / 1 (gait). Throws
/// std::invalid_argument on length mismatch or empty input.
ConfusionCounts confusion(std::span<const int> truth, std::span<const int> predicted, int positive = 1);

MetricsReport compute_metrics(const ConfusionCounts& counts);

/// Area under the precision-recall curve as a step sum over distinct score
/// cut-points (tied scores enter together). Throws std::invalid_argument
/// unless both classes are present.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// F1 with undefined treated as 0; used when maximizing over thresholds.
double f1_or_zero(const ConfusionCounts& counts);

/// Mean and population standard deviation of the defined entries.
struct Aggregate {
  Metric mean;
  Metric stddev;
  std::size_t defined = 0;
};
Aggregate aggregate(std::span<const Metric> values);

/// "12.3" for 0.1234, "—" when undefined.
std::string format_percent(const Metric& m);

}  // namespace gaitsep
