// SPDX-License-Identifier: Apache-2.0
//
// Accelerometer recordings -> labeled, zero-centered 60x3 windows, and the
// stratified / leave-one-subject-out splits built from them.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gaitsep/tensor.hpp"

namespace gaitsep {

inline constexpr std::size_t kWindowLength = 60;
inline constexpr std::size_t kWindowStep = 15;
inline constexpr std::size_t kAxes = 3;
inline constexpr std::size_t kWindowValues = kWindowLength * kAxes;
inline constexpr double kTargetRateHz = 30.0;

/// Raised when input data violates a pipeline precondition (bad CSV,
/// overlapping annotations, empty subject...). Maps to exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Sensor : std::uint8_t { ch = 0, ll = 1, rl = 2, lh = 3, rh = 4 };
inline constexpr std::array<Sensor, 5> kAllSensors{Sensor::ch, Sensor::ll, Sensor::rl, Sensor::lh, Sensor::rh};

std::string_view to_string(Sensor s);
Sensor parse_sensor(std::string_view text);
/// Human-readable position used in per-sensor tables ("Chest", "Left leg", ...).
std::string_view sensor_display_name(Sensor s);

enum class Label : std::uint8_t { non_gait = 0, gait = 1 };
std::string_view to_string(Label l);

struct Recording {
  std::string subject_id;
  Sensor sensor = Sensor::ch;
  double sample_rate_hz = 31.25;         // nominal
  std::vector<double> timestamps_ms;     // strictly increasing
  std::vector<std::array<double, 3>> samples;  // (ax, ay, az) in g

  /// Throws DataError on non-monotone timestamps, size mismatch or non-finite samples.
  void validate() const;
};

struct Annotation {
  double start_ms = 0;
  double stop_ms = 0;
  std::string activity;
};

enum class EventLabel : std::uint8_t { gait, non_gait, excluded };

struct AnnotationEvent {
  double start_ms = 0;
  double stop_ms = 0;
  std::string activity_name;
  EventLabel label = EventLabel::non_gait;
};

/// Case-insensitive substring lists deciding an annotation's label.
struct ActivityRules {
  std::vector<std::string> gait{"Timed Up and Go", "10 Meter Walk", "Gait", "Tandem Walking"};
  std::vector<std::string> excluded{"Retropulsion Pull Test"};

  EventLabel classify(std::string_view activity) const;
};

struct Window {
  std::array<double, kWindowValues> data{};  // row-major (60, 3), zero-mean per axis
  Label label = Label::non_gait;
  std::string subject_id;
  Sensor sensor = Sensor::ch;
  // Provenance: where in the recording the window was cut from.
  double interval_start_ms = 0;
  double interval_stop_ms = 0;
  std::uint32_t offset = 0;  // first sample index within its interval
  // Per-axis means removed by centering; only known for freshly extracted windows.
  std::array<double, 3> axis_mean{};
  bool has_axis_mean = false;

  double at(std::size_t t, std::size_t axis) const { return data[t * kAxes + axis]; }
};

/// Subtracts the per-axis mean in place and returns it.
std::array<double, 3> zero_center(std::array<double, kWindowValues>& data);

/// Linear interpolation onto an exact 1/30 s grid that starts at the first
/// timestamp and ends at (or before) the last one.
Recording resample_to_30hz(const Recording& recording);

/// Labels every annotation; throws DataError when a gait interval overlaps a
/// non-gait one.
std::vector<AnnotationEvent> label_intervals(std::span<const Annotation> annotations,
                                             const ActivityRules& rules = {});

/// Cuts 60-sample windows with step 15 inside each labeled interval
/// independently; excluded intervals yield nothing.
std::vector<Window> extract_windows(const Recording& recording_30hz, std::span<const AnnotationEvent> events);

/// Number of windows an interval of `samples` samples produces.
constexpr std::size_t windows_in_interval(std::size_t samples) {
  return samples < kWindowLength ? 0 : (samples - kWindowLength) / kWindowStep + 1;
}

enum class SplitKind : std::uint8_t { stratified_60_20_20, loso_fold };

/// Index-based split over a window collection.
struct SplitSet {
  SplitKind kind = SplitKind::stratified_60_20_20;
  std::string held_out_subject;  // loso_fold only
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Per-class seeded shuffle, then 60/20/20 per class. Throws DataError when
/// a class has fewer than 5 windows.
SplitSet stratified_split(std::span<const Window> windows, std::uint64_t seed);

/// Per-class seeded shuffle of `indices`, then a (1 - val_fraction) / val_fraction split.
void stratified_two_way(std::span<const Window> windows, std::vector<std::size_t> indices, double val_fraction,
                        std::uint64_t seed, std::vector<std::size_t>& first, std::vector<std::size_t>& second);

inline const std::vector<std::string>& default_loso_subjects() {
  static const std::vector<std::string> ids{"6",  "10", "12", "13", "15", "17", "23", "24",
                                            "25", "33", "35", "36", "40", "42", "44", "63"};
  return ids;
}

/// One fold per subject: test = that subject, the rest split 70/30
/// (train/validation) stratified by label. Only windows of `sensor` are used.
std::vector<SplitSet> loso_folds(std::span<const Window> windows, std::span<const std::string> subject_ids,
                                 std::uint64_t seed, Sensor sensor = Sensor::ch);

/// Windows selected by an index list, packed as a (n, 60, 3) batch.
Feature1D to_batch(std::span<const Window> windows, std::span<const std::size_t> indices);
std::vector<int> labels_of(std::span<const Window> windows, std::span<const std::size_t> indices);

/// Orders windows by (subject, sensor, label, interval, offset, data); used
/// to make splits independent of input order.
bool stable_window_less(const Window& a, const Window& b);

// --- synthetic desk-scale dataset -------------------------------------------

struct SynthConfig {
  std::size_t n_subjects = 16;
  std::size_t windows_per_class = 400;
  double gait_freq_lo_hz = 1.0;
  double gait_freq_hi_hz = 2.2;
  double noise_std = 0.02;
  std::uint64_t seed = 12;
  std::vector<Sensor> sensors{Sensor::ch};
  // Multiplies noise_std for the listed sensors (index = Sensor code).
  std::array<double, 5> sensor_noise{1.0, 1.0, 1.0, 1.0, 1.0};

  void validate() const;
  /// Subject ids: the 16 default LOSO ids when n_subjects == 16, else "S01".."Snn".
  std::vector<std::string> subject_ids() const;
};

/// windows_per_class gait and non-gait windows per subject and sensor.
std::vector<Window> synth_generate(const SynthConfig& config);

}  // namespace gaitsep
