// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale stand-in for clinical recordings. Gait is a subject-specific
// cadence with harmonics; non-gait is low-level noise, postural drift and
// isolated transients, plus periodic arm gestures on forearm sensors.
// Per-subject amplitudes are drawn widely so that a single magnitude
// threshold does not transfer well between subjects.
#include <cmath>
#include <numbers>
#include <cstdio>

#include "gaitsep/data.hpp"
#include "gaitsep/random.hpp"

namespace gaitsep {

void SynthConfig::validate() const {
  if (n_subjects < 1) throw DataError("synth: n_subjects must be >= 1");
  if (windows_per_class < 1) throw DataError("synth: windows_per_class must be >= 1");
  if (!(gait_freq_lo_hz > 0.5 && gait_freq_hi_hz < 3.0 && gait_freq_lo_hz <= gait_freq_hi_hz))
    throw DataError("synth: gait frequency range must lie within (0.5, 3.0) Hz with lo <= hi");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw DataError("synth: noise_std must be >= 0");
  if (sensors.empty()) throw DataError("synth: at least one sensor is required");
  for (double m : sensor_noise)
    if (!(m >= 0.0) || !std::isfinite(m)) throw DataError("synth: sensor noise multipliers must be >= 0");
}

std::vector<std::string> SynthConfig::subject_ids() const {
  if (n_subjects == default_loso_subjects().size()) return default_loso_subjects();
  std::vector<std::string> ids;
  for (std::size_t i = 1; i <= n_subjects; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%02zu", i);
    ids.emplace_back(buf);
  }
  return ids;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct SubjectProfile {
  double cadence_hz;
  double gait_amp;
  std::array<double, 3> axis_weight;
  double harmonic2;
  double harmonic3;
  double activity;        // non-gait transient amplitude scale
  double transient_rate;  // probability a non-gait window holds transients
};

SubjectProfile draw_profile(Rng& rng, const SynthConfig& cfg) {
  SubjectProfile p{};
  p.cadence_hz = rng.uniform(cfg.gait_freq_lo_hz, cfg.gait_freq_hi_hz);
  p.gait_amp = rng.uniform(0.10, 0.32);
  p.axis_weight = {rng.uniform(0.6, 1.0), rng.uniform(0.2, 0.6), rng.uniform(0.3, 0.8)};
  p.harmonic2 = rng.uniform(0.2, 0.6);
  p.harmonic3 = rng.uniform(0.0, 0.3);
  p.activity = rng.uniform(0.02, 0.30);
  p.transient_rate = rng.uniform(0.2, 0.8);
  return p;
}

bool is_forearm(Sensor s) { return s == Sensor::lh || s == Sensor::rh; }

void add_noise(Window& w, Rng& rng, double sd) {
  for (auto& v : w.data) v += rng.normal(0.0, sd);
}

void add_drift(Window& w, Rng& rng) {
  for (std::size_t a = 0; a < kAxes; ++a) {
    const double f = rng.uniform(0.05, 0.3);
    const double amp = rng.uniform(0.0, 0.015);
    const double ph = rng.uniform(0.0, kTwoPi);
    for (std::size_t t = 0; t < kWindowLength; ++t)
      w.data[t * kAxes + a] += amp * std::sin(kTwoPi * f * static_cast<double>(t) / kTargetRateHz + ph);
  }
}

void gait_window(Window& w, Rng& rng, const SubjectProfile& p, double noise) {
  const double f = p.cadence_hz * (1.0 + 0.04 * rng.normal());
  const double amp = p.gait_amp * rng.uniform(0.8, 1.25);
  const std::array<double, 3> rel{1.0, p.harmonic2, p.harmonic3};
  for (std::size_t a = 0; a < kAxes; ++a) {
    for (std::size_t h = 0; h < 3; ++h) {
      const double ph = rng.uniform(0.0, kTwoPi);
      const double scale = amp * p.axis_weight[a] * rel[h];
      const double omega = kTwoPi * f * static_cast<double>(h + 1) / kTargetRateHz;
      for (std::size_t t = 0; t < kWindowLength; ++t)
        w.data[t * kAxes + a] += scale * std::sin(omega * static_cast<double>(t) + ph);
    }
  }
  add_drift(w, rng);
  add_noise(w, rng, noise);
}

void non_gait_window(Window& w, Rng& rng, const SubjectProfile& p, double noise, Sensor sensor) {
  add_drift(w, rng);
  add_noise(w, rng, noise);
  if (rng.bernoulli(p.transient_rate)) {
    const int pulses = rng.bernoulli(0.5) ? 1 : 2;
    for (int k = 0; k < pulses; ++k) {
      const double centre = rng.uniform(0.0, static_cast<double>(kWindowLength));
      const double width = rng.uniform(2.0, 8.0);
      const double amp = p.activity * rng.uniform(0.5, 1.5);
      std::array<double, 3> dir{rng.normal(), rng.normal(), rng.normal()};
      const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
      for (std::size_t t = 0; t < kWindowLength; ++t) {
        const double d = (static_cast<double>(t) - centre) / width;
        const double g = amp * std::exp(-0.5 * d * d);
        for (std::size_t a = 0; a < kAxes; ++a) w.data[t * kAxes + a] += g * dir[a] / norm;
      }
    }
  }
  if (is_forearm(sensor) && rng.bernoulli(0.35)) {
    // Short periodic gesture: the arm-motion confounder.
    const double f = rng.uniform(1.0, 3.0);
    const double amp = p.gait_amp * rng.uniform(0.7, 1.5);
    const auto len = static_cast<std::size_t>(rng.uniform(15.0, 30.0));
    const std::size_t start = static_cast<std::size_t>(rng.below(kWindowLength - len + 1));
    const std::size_t axis = static_cast<std::size_t>(rng.below(3));
    const double ph = rng.uniform(0.0, kTwoPi);
    for (std::size_t t = start; t < start + len; ++t)
      w.data[t * kAxes + axis] += amp * std::sin(kTwoPi * f * static_cast<double>(t) / kTargetRateHz + ph);
  }
}

}  // namespace

std::vector<Window> synth_generate(const SynthConfig& config) {
  config.validate();
  const auto ids = config.subject_ids();
  std::vector<Window> out;
  out.reserve(ids.size() * config.sensors.size() * 2 * config.windows_per_class);
  for (std::size_t s = 0; s < ids.size(); ++s) {
    Rng profile_rng = Rng::derive(config.seed, {0x5eb1u, s});
    const SubjectProfile profile = draw_profile(profile_rng, config);
    for (Sensor sensor : config.sensors) {
      const double noise = config.noise_std * config.sensor_noise[static_cast<std::size_t>(sensor)];
      Rng rng = Rng::derive(config.seed, {0x3a7du, s, static_cast<std::uint64_t>(sensor)});
      for (Label label : {Label::gait, Label::non_gait}) {
        for (std::size_t i = 0; i < config.windows_per_class; ++i) {
          Window w;
          w.label = label;
          w.subject_id = ids[s];
          w.sensor = sensor;
          w.offset = static_cast<std::uint32_t>(i);
          if (label == Label::gait)
            gait_window(w, rng, profile, noise);
          else
            non_gait_window(w, rng, profile, noise, sensor);
          w.axis_mean = zero_center(w.data);
          w.has_axis_mean = true;
          out.push_back(std::move(w));
        }
      }
    }
  }
  return out;
}

}  // namespace gaitsep
