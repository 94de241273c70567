// SPDX-License-Identifier: Apache-2.0
//
// Result tables: per-fold LOSO tables with mean/sigma rows, the cross-detector
// summary, and the per-sensor table. Every table is emitted twice: CSV with
// one-decimal percentages and JSON at full precision (null = undefined).
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gaitsep/metrics.hpp"

namespace gaitsep {

/// Evaluation of one detector on one test set.
struct Evaluation {
  std::string key;  // subject id or sensor name
  ConfusionCounts counts;
  MetricsReport metrics;
};

struct FoldTable {
  std::string detector;  // "model1", "model2", "baseline", "threshold"
  bool has_pr_auc = true;
  std::vector<Evaluation> rows;  // sorted by subject id
};

/// Numeric ids compare numerically ("6" < "10"), anything else lexically
/// after them.
bool subject_less(const std::string& a, const std::string& b);
void sort_by_subject(std::vector<Evaluation>& rows);

/// "Model 1", "Model 2", "Baseline", "Threshold".
std::string_view detector_display_name(std::string_view detector);

/// Columns ID, Acc, TNR, TPR, PPV, F1 (+ PR-AUC), then the mean and sigma rows.
std::string fold_table_csv(const FoldTable& table);
nlohmann::json fold_table_json(const FoldTable& table);

/// One row per metric (Accuracy ... PR-AUC), one column per detector, each
/// cell the mean over folds.
std::string summary_csv(std::span<const FoldTable> tables);
nlohmann::json summary_json(std::span<const FoldTable> tables);

struct SensorTable {
  std::string detector;
  bool has_pr_auc = true;
  std::vector<Evaluation> rows;  // display order, "All" last
};

std::string sensor_table_csv(std::span<const SensorTable> tables);
nlohmann::json sensor_table_json(std::span<const SensorTable> tables);

nlohmann::json to_json(const ConfusionCounts& counts);
nlohmann::json to_json(const MetricsReport& metrics);

}  // namespace gaitsep
