// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/report.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace gaitsep {
namespace {

using Field = Metric MetricsReport::*;

struct Column {
  const char* table_name;    // per-fold / per-sensor header
  const char* summary_name;  // summary row label
  const char* json_name;
  Field field;
};

constexpr Column kSummaryRows[] = {
    {"Acc (%)", "Accuracy", "accuracy", &MetricsReport::accuracy},
    {"TNR (%)", "Specificity", "specificity", &MetricsReport::specificity},
    {"TPR (%)", "Recall", "recall", &MetricsReport::recall},
    {"PPV (%)", "Precision", "precision", &MetricsReport::precision},
    {"F1 (%)", "F1-score", "f1", &MetricsReport::f1},
    {"MCC (%)", "MCC", "mcc", &MetricsReport::mcc},
    {"GM (%)", "GM", "gm", &MetricsReport::gm},
    {"Cohen-K (%)", "Cohen-K", "cohen_kappa", &MetricsReport::cohen_kappa},
    {"PR-AUC (%)", "PR-AUC", "pr_auc", &MetricsReport::pr_auc},
};

// Acc, TNR, TPR, PPV, F1 and optionally PR-AUC.
std::vector<const Column*> table_columns(bool pr_auc) {
  std::vector<const Column*> cols;
  for (std::size_t i = 0; i < 5; ++i) cols.push_back(&kSummaryRows[i]);
  if (pr_auc) cols.push_back(&kSummaryRows[8]);
  return cols;
}

nlohmann::json metric_json(const Metric& m) { return m ? nlohmann::json(*m) : nlohmann::json(nullptr); }

Aggregate column_aggregate(std::span<const Evaluation> rows, Field field) {
  std::vector<Metric> values;
  values.reserve(rows.size());
  for (const auto& r : rows) values.push_back(r.metrics.*field);
  return aggregate(values);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr const char* kConventionNote =
    "# sigma: population standard deviation over folds; undefined values shown as \xE2\x80\x94 and skipped\n"
    "# even kernels pad floor((k-1)/2) samples left and ceil((k-1)/2) right\n";

}  // namespace

bool subject_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s, unsigned long long& v) {
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return !s.empty() && ec == std::errc() && p == s.data() + s.size();
  };
  unsigned long long va = 0, vb = 0;
  const bool na = numeric(a, va), nb = numeric(b, vb);
  if (na && nb) return va != vb ? va < vb : a < b;
  if (na != nb) return na;
  return a < b;
}

void sort_by_subject(std::vector<Evaluation>& rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Evaluation& x, const Evaluation& y) { return subject_less(x.key, y.key); });
}

std::string_view detector_display_name(std::string_view detector) {
  if (detector == "model1") return "Model 1";
  if (detector == "model2") return "Model 2";
  if (detector == "baseline") return "Baseline";
  if (detector == "threshold") return "Threshold";
  return detector;
}

nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

nlohmann::json to_json(const MetricsReport& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& col : kSummaryRows) j[col.json_name] = metric_json(m.*col.field);
  return j;
}

std::string fold_table_csv(const FoldTable& table) {
  const auto cols = table_columns(table.has_pr_auc);
  std::ostringstream out;
  out << kConventionNote << "ID";
  for (const auto* c : cols) out << ',' << c->table_name;
  out << '\n';
  for (const auto& r : table.rows) {
    out << csv_field(r.key);
    for (const auto* c : cols) out << ',' << format_percent(r.metrics.*c->field);
    out << '\n';
  }
  std::vector<Aggregate> aggs;
  for (const auto* c : cols) aggs.push_back(column_aggregate(table.rows, c->field));
  out << "\xCE\xBC";
  for (const auto& a : aggs) out << ',' << format_percent(a.mean);
  out << "\n\xCF\x83";
  for (const auto& a : aggs) out << ',' << format_percent(a.stddev);
  out << '\n';
  return out.str();
}

nlohmann::json fold_table_json(const FoldTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"id", r.key}, {"counts", to_json(r.counts)}, {"metrics", to_json(r.metrics)}});
  nlohmann::json mean = nlohmann::json::object(), sigma = nlohmann::json::object();
  for (const auto& col : kSummaryRows) {
    if (col.field == &MetricsReport::pr_auc && !table.has_pr_auc) continue;
    const auto a = column_aggregate(table.rows, col.field);
    mean[col.json_name] = metric_json(a.mean);
    sigma[col.json_name] = metric_json(a.stddev);
  }
  return {{"detector", table.detector},
          {"sigma", "population"},
          {"rows", std::move(rows)},
          {"mean", std::move(mean)},
          {"stddev", std::move(sigma)}};
}

std::string summary_csv(std::span<const FoldTable> tables) {
  std::ostringstream out;
  out << kConventionNote << "Metric %";
  for (const auto& t : tables) out << ',' << detector_display_name(t.detector);
  out << '\n';
  for (const auto& col : kSummaryRows) {
    out << col.summary_name;
    for (const auto& t : tables) {
      const bool absent = col.field == &MetricsReport::pr_auc && !t.has_pr_auc;
      out << ',' << format_percent(absent ? Metric{} : column_aggregate(t.rows, col.field).mean);
    }
    out << '\n';
  }
  return out.str();
}

nlohmann::json summary_json(std::span<const FoldTable> tables) {
  nlohmann::json detectors = nlohmann::json::array();
  for (const auto& t : tables) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& col : kSummaryRows) {
      if (col.field == &MetricsReport::pr_auc && !t.has_pr_auc) {
        metrics[col.json_name] = nullptr;
        continue;
      }
      const auto a = column_aggregate(t.rows, col.field);
      metrics[col.json_name] = {{"mean", metric_json(a.mean)}, {"stddev", metric_json(a.stddev)}, {"defined", a.defined}};
    }
    detectors.push_back({{"detector", t.detector}, {"folds", t.rows.size()}, {"metrics", std::move(metrics)}});
  }
  return {{"sigma", "population"}, {"detectors", std::move(detectors)}};
}

std::string sensor_table_csv(std::span<const SensorTable> tables) {
  const auto cols = table_columns(false);
  std::ostringstream out;
  out << "Model,Sensor";
  for (const auto* c : cols) out << ',' << c->table_name;
  out << '\n';
  for (const auto& t : tables)
    for (const auto& r : t.rows) {
      out << detector_display_name(t.detector) << ',' << csv_field(r.key);
      for (const auto* c : cols) out << ',' << format_percent(r.metrics.*c->field);
      out << '\n';
    }
  return out.str();
}

nlohmann::json sensor_table_json(std::span<const SensorTable> tables) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : tables) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows) {
      auto metrics = to_json(r.metrics);
      if (!t.has_pr_auc) metrics["pr_auc"] = nullptr;
      rows.push_back({{"sensor", r.key}, {"counts", to_json(r.counts)}, {"metrics", std::move(metrics)}});
    }
    out.push_back({{"detector", t.detector}, {"rows", std::move(rows)}});
  }
  return {{"detectors", std::move(out)}};
}

}  // namespace gaitsep
