// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "gaitsep/threshold.hpp"
#include "support.hpp"

using namespace gaitsep;
using namespace testing_support;

TEST_CASE("window magnitude examples") {
  const std::vector<double> zeros(180, 0.0);
  CHECK(window_magnitude(zeros) == 0.0);
  const std::vector<double> one{1.0, 2.0, 2.0};
  CHECK(window_magnitude(one) == 9.0);
  const std::vector<double> two{0.5, -0.1, 0.2, 0.0, 0.4, -0.3};
  CHECK(window_magnitude(two) == doctest::Approx(0.25 + 0.01 + 0.04 + 0.16 + 0.09).epsilon(1e-15));
  CHECK_THROWS_AS(window_magnitude(std::vector<double>{}), ContractError);
  CHECK_THROWS_AS(window_magnitude(std::vector<double>{1.0, 2.0}), ContractError);
}

TEST_CASE("raw magnitude adds the removed axis means back") {
  Rng rng(2);
  Window w = random_window(rng);
  w.axis_mean = {0.0, 0.0, 1.0};
  CHECK_THROWS_AS(window_magnitude(w, MagnitudeMode::raw), ContractError);
  w.has_axis_mean = true;
  // sum (x + m)^2 = sum x^2 + 2 m sum x + n m^2, and sum x = 0 per axis.
  CHECK(window_magnitude(w, MagnitudeMode::raw) == doctest::Approx(window_magnitude(w) + 60.0).epsilon(1e-12));
}

TEST_CASE("fit picks the separating midpoint") {
  const std::vector<double> mags{1, 3, 5, 7, 9};
  const std::vector<int> labels{0, 0, 0, 1, 1};
  const auto m = fit_threshold_magnitudes(mags, labels);
  CHECK(m.tau == 6.0);
  CHECK(m.fit_f1 == 1.0);

  // With every gait window at the top but one non-gait window above them all,
  // the best rule still flags the gait block; tau=0 would flag everything.
  const std::vector<double> mags2{1, 2, 3, 4, 10};
  const std::vector<int> labels2{0, 0, 1, 1, 0};
  const auto m2 = fit_threshold_magnitudes(mags2, labels2);
  CHECK(m2.tau == 2.5);
  CHECK(m2.fit_f1 == doctest::Approx(0.8));

  CHECK_THROWS_AS(fit_threshold_magnitudes(mags, std::vector<int>{0, 0, 0, 0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(fit_threshold_magnitudes(mags, std::vector<int>{1, 0}), std::invalid_argument);
}

TEST_CASE("fit agrees with exhaustive search, ties included") {
  Rng rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> mags(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
      // Coarse values force ties; occasional exact zeros hit the tau = 0 edge.
      mags[i] = trial % 3 == 0 ? static_cast<double>(rng.below(6)) : rng.uniform(0.0, 5.0) + labels[i];
    }
    labels[0] = 1;
    labels[1] = 0;
    const auto fit = fit_threshold_magnitudes(mags, labels);
    const auto [best_f1, best_tau] = brute_force_magnitude_fit(mags, labels);
    CAPTURE(trial);
    CHECK(fit.fit_f1 == doctest::Approx(best_f1).epsilon(1e-12));
    CHECK(fit.tau == best_tau);
  }
}

TEST_CASE("decision is strict and monotone in magnitude") {
  const ThresholdModel m{4.0, 1.0};
  CHECK(classify_magnitude(4.0, m) == Label::non_gait);
  CHECK(classify_magnitude(std::nextafter(4.0, 5.0), m) == Label::gait);
  CHECK(classify_magnitude(0.0, ThresholdModel{0.0, 0.0}) == Label::non_gait);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0, 10), b = rng.uniform(0, 10);
    if (a <= b && classify_magnitude(a, m) == Label::gait) CHECK(classify_magnitude(b, m) == Label::gait);
  }
}

TEST_CASE("scaling every window by c scales tau by c squared") {
  Rng rng(9);
  std::vector<Window> windows;
  for (int i = 0; i < 80; ++i) {
    Window w = random_window(rng, i % 2 ? 0.4 : 0.2);
    w.label = i % 2 ? Label::gait : Label::non_gait;
    windows.push_back(w);
  }
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto base = fit_threshold(windows, idx);
  const double c = 3.0;
  auto scaled = windows;
  for (auto& w : scaled)
    for (auto& v : w.data) v *= c;
  const auto fit = fit_threshold(scaled, idx);
  CHECK(fit.tau == doctest::Approx(base.tau * c * c).epsilon(1e-12));
  CHECK(fit.fit_f1 == base.fit_f1);
  for (std::size_t i = 0; i < windows.size(); ++i) CHECK(classify(windows[i], base) == classify(scaled[i], fit));
}

TEST_CASE("threshold model text round trip") {
  const ThresholdModel m{0.1 + 0.2, 2.0 / 3.0};
  const auto back = parse_threshold_model(serialize(m));
  CHECK(back.tau == m.tau);
  CHECK(back.fit_f1 == m.fit_f1);
  CHECK_THROWS_AS(parse_threshold_model("tau=1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_threshold_model("tau=x fit_f1=0.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_threshold_model("tau=1 fit_f1=1.5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_threshold_model("tau=1 fit_f1=0.5 extra"), std::invalid_argument);
}
