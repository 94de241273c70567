// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver behind the command-line tool: configuration, dataset
// assembly, leave-one-subject-out runs, the per-sensor evaluation, and the
// run directory with its manifest.
//
// Config file (JSON; unknown keys are rejected at every level):
//   {
//     "data":   {"cache": "windows.gwin", "csv_dir": "raw/", "subjects": ["6", "10"],
//                "sensors": ["ch"], "columns": {"time": "t_ms", "ax": "ax_g", "ay": "ay_g", "az": "az_g"},
//                "gait_activities": [...], "excluded_activities": [...]},
//     "synth":  {"n_subjects": 16, "windows_per_class": 400, "gait_freq_hz": [1.0, 2.2],
//                "noise_std": 0.02, "seed": 12, "sensors": ["ch"], "sensor_noise": {"lh": 3.0}},
//     "detectors": ["model1", "model2", "baseline", "threshold"],
//     "train": {<any TrainConfig field>},
//     "threshold_mode": "zero_centered" | "raw",
//     "sensor": "ch",
//     "output_dir": "runs",
//     "seed": 12
//   }
// Windows come from data.cache when set, else from the CSV pipeline when
// data.csv_dir is set, else from the synthetic generator. "seed" drives the
// splits and is the default for synth.seed and train.seed.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"
#include "gaitsep/dataset_io.hpp"
#include "gaitsep/report.hpp"
#include "gaitsep/threshold.hpp"
#include "gaitsep/trainer.hpp"

namespace gaitsep {

std::string_view toolkit_version();

/// Bad or unknown configuration keys and values (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configured input file does not exist (exit code 4).
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configured subject produced no windows (exit code 5).
class EmptySubjectError : public DataError {
 public:
  using DataError::DataError;
};

enum class Detector : std::uint8_t { model1, model2, baseline, threshold };
std::string_view to_string(Detector d);
Detector parse_detector(std::string_view text);
bool is_cnn(Detector d);
ModelName model_name(Detector d);  // CNN detectors only

struct ExperimentConfig {
  std::filesystem::path cache;
  std::filesystem::path csv_dir;
  std::vector<std::string> subjects;  // empty: every subject in the data (CSV: the 16 default ids)
  std::vector<Sensor> prepare_sensors{Sensor::ch};
  CsvColumns columns;
  ActivityRules activities;
  SynthConfig synth;
  std::vector<Detector> detectors{Detector::model1, Detector::model2, Detector::baseline, Detector::threshold};
  TrainConfig train;
  MagnitudeMode threshold_mode = MagnitudeMode::zero_centered;
  Sensor sensor = Sensor::ch;
  std::filesystem::path output_dir = "runs";
  std::uint64_t seed = 12;
};

/// Throws ConfigError on malformed JSON, unknown keys or invalid values.
/// Relative paths are resolved against `base_dir`.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field spelled out; parse_config(resolved_config_json(c)) == c.
std::string resolved_config_json(const ExperimentConfig& config);
/// FNV-1a 64 of the resolved JSON.
std::uint64_t config_hash(const ExperimentConfig& config);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t value);

/// Per-subject, per-class window counts.
using WindowCounts = std::map<std::string, std::array<std::size_t, 2>>;
WindowCounts count_windows(std::span<const Window> windows);

/// CSV pipeline over the configured subjects and sensors: resample, label,
/// window, centre. Throws MissingInputError, DataError or EmptySubjectError.
std::vector<Window> prepare_from_csv(const ExperimentConfig& config);

/// Cache, CSV pipeline or synthetic generator, in that order of preference.
std::vector<Window> load_windows(const ExperimentConfig& config);

using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  std::size_t jobs = 1;
  std::filesystem::path run_dir;  // empty: output_dir/<timestamp>-<config hash>
  Logger log;                     // may be empty
};

struct FoldStatus {
  std::string detector;
  std::string subject;  // "all" for eval-sensors
  bool ok = true;
  std::string error;
};

struct LosoResult {
  std::filesystem::path run_dir;
  std::vector<FoldTable> tables;  // configured detector order, successful folds only
  std::vector<FoldStatus> folds;
  bool all_ok() const;
};

/// Trains and evaluates every configured detector on every LOSO fold and
/// writes the run directory. Fold failures are recorded, not thrown.
LosoResult run_loso(const ExperimentConfig& config, std::span<const Window> windows, const RunOptions& options);

struct SensorResult {
  std::filesystem::path run_dir;
  std::vector<SensorTable> tables;
  std::vector<FoldStatus> folds;
  bool all_ok() const;
};

/// One 60/20/20 stratified split over all five sensors; each detector is
/// trained once and evaluated per sensor and on the whole test set.
/// Throws DataError when a sensor is missing.
SensorResult run_eval_sensors(const ExperimentConfig& config, std::span<const Window> windows,
                              const RunOptions& options);

/// Re-opens every artifact listed in a manifest and compares hashes.
/// Returns the problems found (empty when consistent).
std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path);

/// Path of a fold's model artifact as recorded in the manifest.
std::filesystem::path manifest_artifact(const std::filesystem::path& manifest_path, std::string_view detector,
                                        std::string_view subject);

/// 60 rows of three comma-separated values; an optional non-numeric header
/// line is skipped. Throws DataError.
std::array<double, kWindowValues> read_window_csv(const std::filesystem::path& path);

}  // namespace gaitsep
