// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "gaitsep/data.hpp"
#include "gaitsep/random.hpp"

namespace gaitsep {

std::string_view to_string(Sensor s) {
  switch (s) {
    case Sensor::ch: return "ch";
    case Sensor::ll: return "ll";
    case Sensor::rl: return "rl";
    case Sensor::lh: return "lh";
    case Sensor::rh: return "rh";
  }
  return "??";
}

Sensor parse_sensor(std::string_view text) {
  for (Sensor s : kAllSensors)
    if (to_string(s) == text) return s;
  throw DataError("unknown sensor '" + std::string(text) + "' (expected ch, ll, rl, lh or rh)");
}

std::string_view sensor_display_name(Sensor s) {
  switch (s) {
    case Sensor::ch: return "Chest";
    case Sensor::ll: return "Left leg";
    case Sensor::rl: return "Right leg";
    case Sensor::lh: return "Left arm";
    case Sensor::rh: return "Right arm";
  }
  return "?";
}

std::string_view to_string(Label l) { return l == Label::gait ? "gait" : "non_gait"; }

void Recording::validate() const {
  if (timestamps_ms.size() != samples.size())
    throw DataError("recording " + subject_id + "/" + std::string(to_string(sensor)) +
                    ": timestamp and sample counts differ");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(timestamps_ms[i])) throw DataError("non-finite timestamp at row " + std::to_string(i));
    for (double v : samples[i])
      if (!std::isfinite(v)) throw DataError("non-finite sample at row " + std::to_string(i));
    if (i > 0 && !(timestamps_ms[i] > timestamps_ms[i - 1]))
      throw DataError("timestamps not strictly increasing at row " + std::to_string(i));
  }
}

namespace {

bool icontains(std::string_view hay, std::string_view needle) {
  if (needle.empty()) return false;
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end(), [](char a, char b) {
    return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
  });
  return it != hay.end();
}

}  // namespace

EventLabel ActivityRules::classify(std::string_view activity) const {
  for (const auto& e : excluded)
    if (icontains(activity, e)) return EventLabel::excluded;
  for (const auto& g : gait)
    if (icontains(activity, g)) return EventLabel::gait;
  return EventLabel::non_gait;
}

std::array<double, 3> zero_center(std::array<double, kWindowValues>& data) {
  std::array<double, 3> mean{};
  for (std::size_t t = 0; t < kWindowLength; ++t)
    for (std::size_t a = 0; a < kAxes; ++a) mean[a] += data[t * kAxes + a];
  for (auto& m : mean) m /= static_cast<double>(kWindowLength);
  for (std::size_t t = 0; t < kWindowLength; ++t)
    for (std::size_t a = 0; a < kAxes; ++a) data[t * kAxes + a] -= mean[a];
  return mean;
}

Recording resample_to_30hz(const Recording& recording) {
  recording.validate();
  if (recording.samples.size() < 2) throw DataError("resampling needs at least 2 samples");
  const double step = 1000.0 / kTargetRateHz;
  const double t0 = recording.timestamps_ms.front();
  const double t_last = recording.timestamps_ms.back();
  const auto& ts = recording.timestamps_ms;

  Recording out;
  out.subject_id = recording.subject_id;
  out.sensor = recording.sensor;
  out.sample_rate_hz = kTargetRateHz;
  std::size_t j = 0;
  for (std::size_t k = 0;; ++k) {
    double t = t0 + static_cast<double>(k) * step;
    if (t > t_last) {
      // Absorb rounding in k * step so a grid point that lands on the last
      // input timestamp is kept.
      if (t - t_last > 1e-6 * step) break;
      t = t_last;
    }
    while (j + 2 < ts.size() && ts[j + 1] <= t) ++j;
    const double span = ts[j + 1] - ts[j];
    const double alpha = std::clamp((t - ts[j]) / span, 0.0, 1.0);
    std::array<double, 3> v{};
    for (std::size_t a = 0; a < 3; ++a) {
      const double lo = recording.samples[j][a];
      const double hi = recording.samples[j + 1][a];
      v[a] = alpha == 0.0 ? lo : (alpha == 1.0 ? hi : lo + (hi - lo) * alpha);
    }
    out.timestamps_ms.push_back(t);
    out.samples.push_back(v);
    if (t == t_last) break;
  }
  return out;
}

std::vector<AnnotationEvent> label_intervals(std::span<const Annotation> annotations, const ActivityRules& rules) {
  std::vector<AnnotationEvent> events;
  events.reserve(annotations.size());
  for (const auto& a : annotations) {
    if (!(a.start_ms < a.stop_ms))
      throw DataError("annotation '" + a.activity + "' has start >= stop (" + std::to_string(a.start_ms) + ", " +
                      std::to_string(a.stop_ms) + ")");
    events.push_back({a.start_ms, a.stop_ms, a.activity, rules.classify(a.activity)});
  }
  for (const auto& g : events) {
    if (g.label != EventLabel::gait) continue;
    for (const auto& n : events) {
      if (n.label != EventLabel::non_gait) continue;
      if (g.start_ms < n.stop_ms && n.start_ms < g.stop_ms)
        throw DataError("gait interval '" + g.activity_name + "' [" + std::to_string(g.start_ms) + ", " +
                        std::to_string(g.stop_ms) + ") overlaps non-gait interval '" + n.activity_name + "' [" +
                        std::to_string(n.start_ms) + ", " + std::to_string(n.stop_ms) + ")");
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const AnnotationEvent& a, const AnnotationEvent& b) { return a.start_ms < b.start_ms; });
  return events;
}

std::vector<Window> extract_windows(const Recording& recording_30hz, std::span<const AnnotationEvent> events) {
  recording_30hz.validate();
  if (std::abs(recording_30hz.sample_rate_hz - kTargetRateHz) > 1e-9)
    throw DataError("extract_windows expects a 30 Hz recording");
  const auto& ts = recording_30hz.timestamps_ms;

  std::vector<AnnotationEvent> ordered(events.begin(), events.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const AnnotationEvent& a, const AnnotationEvent& b) { return a.start_ms < b.start_ms; });

  std::vector<Window> out;
  for (const auto& ev : ordered) {
    if (ev.label == EventLabel::excluded) continue;
    const auto first = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), ev.start_ms) - ts.begin());
    const auto last = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), ev.stop_ms) - ts.begin());
    const std::size_t n = last > first ? last - first : 0;
    for (std::size_t w = 0; w < windows_in_interval(n); ++w) {
      const std::size_t off = w * kWindowStep;
      Window win;
      for (std::size_t t = 0; t < kWindowLength; ++t)
        for (std::size_t a = 0; a < kAxes; ++a) win.data[t * kAxes + a] = recording_30hz.samples[first + off + t][a];
      win.axis_mean = zero_center(win.data);
      win.has_axis_mean = true;
      win.label = ev.label == EventLabel::gait ? Label::gait : Label::non_gait;
      win.subject_id = recording_30hz.subject_id;
      win.sensor = recording_30hz.sensor;
      win.interval_start_ms = ev.start_ms;
      win.interval_stop_ms = ev.stop_ms;
      win.offset = static_cast<std::uint32_t>(off);
      out.push_back(std::move(win));
    }
  }
  return out;
}

bool stable_window_less(const Window& a, const Window& b) {
  if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
  if (a.sensor != b.sensor) return a.sensor < b.sensor;
  if (a.label != b.label) return a.label < b.label;
  if (a.interval_start_ms != b.interval_start_ms) return a.interval_start_ms < b.interval_start_ms;
  if (a.offset != b.offset) return a.offset < b.offset;
  return a.data < b.data;
}

namespace {

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t rounded_share(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 0.5));
}

/// Indices grouped per label, each group in stable-key order then shuffled.
std::array<std::vector<std::size_t>, 2> shuffled_by_label(std::span<const Window> windows,
                                                           std::vector<std::size_t> indices, std::uint64_t seed) {
  std::sort(indices.begin(), indices.end(),
            [&](std::size_t a, std::size_t b) { return stable_window_less(windows[a], windows[b]); });
  std::array<std::vector<std::size_t>, 2> groups;
  for (auto i : indices) groups[static_cast<std::size_t>(windows[i].label)].push_back(i);
  for (std::size_t l = 0; l < 2; ++l) {
    Rng rng = Rng::derive(seed, {0x5711u, l});
    rng.shuffle(std::span<std::size_t>(groups[l]));
  }
  return groups;
}

}  // namespace

SplitSet stratified_split(std::span<const Window> windows, std::uint64_t seed) {
  std::vector<std::size_t> all(windows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto groups = shuffled_by_label(windows, std::move(all), seed);
  SplitSet split;
  split.kind = SplitKind::stratified_60_20_20;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& g = groups[l];
    if (g.size() < 5)
      throw DataError("class " + std::string(to_string(static_cast<Label>(l))) + " has " + std::to_string(g.size()) +
                      " windows; at least 5 are needed for a 60/20/20 split");
    const std::size_t n_val = rounded_share(g.size(), 0.2);
    const std::size_t n_test = rounded_share(g.size(), 0.2);
    const std::size_t n_train = g.size() - n_val - n_test;
    split.train.insert(split.train.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.validation.insert(split.validation.end(), g.begin() + static_cast<std::ptrdiff_t>(n_train),
                            g.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.insert(split.test.end(), g.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), g.end());
  }
  return split;
}

void stratified_two_way(std::span<const Window> windows, std::vector<std::size_t> indices, double val_fraction,
                        std::uint64_t seed, std::vector<std::size_t>& first, std::vector<std::size_t>& second) {
  auto groups = shuffled_by_label(windows, std::move(indices), seed);
  first.clear();
  second.clear();
  for (const auto& g : groups) {
    const std::size_t n_second = rounded_share(g.size(), val_fraction);
    const std::size_t n_first = g.size() - n_second;
    first.insert(first.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_first));
    second.insert(second.end(), g.begin() + static_cast<std::ptrdiff_t>(n_first), g.end());
  }
}

std::vector<SplitSet> loso_folds(std::span<const Window> windows, std::span<const std::string> subject_ids,
                                 std::uint64_t seed, Sensor sensor) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].sensor != sensor) continue;
    if (std::find(subject_ids.begin(), subject_ids.end(), windows[i].subject_id) == subject_ids.end()) continue;
    pool.push_back(i);
  }
  std::vector<SplitSet> folds;
  folds.reserve(subject_ids.size());
  for (const auto& subject : subject_ids) {
    SplitSet fold;
    fold.kind = SplitKind::loso_fold;
    fold.held_out_subject = subject;
    std::vector<std::size_t> rest;
    for (auto i : pool) (windows[i].subject_id == subject ? fold.test : rest).push_back(i);
    if (fold.test.empty())
      throw DataError("subject " + subject + " has no " + std::string(to_string(sensor)) + " windows");
    std::sort(fold.test.begin(), fold.test.end(),
              [&](std::size_t a, std::size_t b) { return stable_window_less(windows[a], windows[b]); });
    stratified_two_way(windows, std::move(rest), 0.3, seed ^ hash_string(subject), fold.train, fold.validation);
    folds.push_back(std::move(fold));
  }
  return folds;
}

Feature1D to_batch(std::span<const Window> windows, std::span<const std::size_t> indices) {
  Feature1D batch(indices.size(), kWindowLength, kAxes);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& w = windows[indices[b]];
    std::copy(w.data.begin(), w.data.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(b * kWindowValues));
  }
  return batch;
}

std::vector<int> labels_of(std::span<const Window> windows, std::span<const std::size_t> indices) {
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) labels[i] = static_cast<int>(windows[indices[i]].label);
  return labels;
}

}  // namespace gaitsep
