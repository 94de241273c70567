// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <sstream>

#include "gaitsep/trainer.hpp"
#include "support.hpp"

using namespace gaitsep;
using namespace testing_support;

namespace {

using big = boost::multiprecision::cpp_bin_float_50;

std::pair<double, double> weights_oracle(std::uint64_t n0, std::uint64_t n1, double beta_d) {
  const big beta(beta_d);
  auto inv_effective = [&](std::uint64_t n) { return (1 - beta) / (1 - pow(beta, static_cast<int>(n))); };
  const big w0 = inv_effective(n0), w1 = inv_effective(n1);
  const big mean = (w0 * n0 + w1 * n1) / (n0 + n1);
  return {static_cast<double>(w0 / mean), static_cast<double>(w1 / mean)};
}

std::vector<Window> small_synth(std::size_t subjects, std::size_t per_class, std::uint64_t seed = 12) {
  SynthConfig sc;
  sc.n_subjects = subjects;
  sc.windows_per_class = per_class;
  sc.seed = seed;
  return synth_generate(sc);
}

SplitSet first_fold(std::span<const Window> windows, std::size_t subjects) {
  SynthConfig sc;
  sc.n_subjects = subjects;
  return loso_folds(windows, sc.subject_ids(), 12).front();
}

}  // namespace

TEST_CASE("class weights") {
  const auto eq = compute_class_weights(300, 300, 0.999);
  CHECK(eq.w0 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(eq.w1 == doctest::Approx(1.0).epsilon(1e-15));

  const auto w = compute_class_weights(800, 200, 0.999);
  const auto [o0, o1] = weights_oracle(800, 200, 0.999);
  CHECK(std::abs(w.w0 / o0 - 1) < 1e-9);
  CHECK(std::abs(w.w1 / o1 - 1) < 1e-9);
  CHECK(w[1] == w.w1);
  CHECK(w[0] == w.w0);

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t n0 = 1 + rng.below(20000), n1 = 1 + rng.below(20000);
    const double beta = i % 2 ? 0.999 : rng.uniform(0.5, 0.9999);
    const auto cw = compute_class_weights(n0, n1, beta);
    const auto [e0, e1] = weights_oracle(n0, n1, beta);
    CAPTURE(n0);
    CAPTURE(n1);
    CHECK(std::abs(cw.w0 / e0 - 1) < 1e-9);
    CHECK(std::abs(cw.w1 / e1 - 1) < 1e-9);
    // Unit average weight over the training samples.
    CHECK(std::abs((cw.w0 * n0 + cw.w1 * n1) / (n0 + n1) - 1.0) < 1e-12);
    if (n0 > n1) CHECK(cw.w1 >= cw.w0);
    if (n1 > n0) CHECK(cw.w0 >= cw.w1);
  }
  CHECK_THROWS_AS(compute_class_weights(0, 5, 0.999), std::invalid_argument);
  CHECK_THROWS_AS(compute_class_weights(5, 5, 1.0), std::invalid_argument);
}

TEST_CASE("AdamW with zero gradient only decays kernels") {
  const auto spec = build_spec(ModelName::model1);
  auto params = init_params(spec, 4);
  Rng rng(1);
  perturb_params(params, rng);
  const auto before = params;
  auto grads = zeros_like(params);
  auto state = make_optimizer_state(params);
  TrainConfig cfg;
  adamw_step(params, grads, state, cfg, cfg.learning_rate);
  auto now = trainable_tensors(params);
  auto was = trainable_tensors(const_cast<ModelParams&>(before));
  for (std::size_t t = 0; t < now.size(); ++t)
    for (std::size_t j = 0; j < now[t].values.size(); ++j) {
      const double expect = decays(now[t].role) ? was[t].values[j] * (1.0 - 1e-7) : was[t].values[j];
      CHECK(now[t].values[j] == doctest::Approx(expect).epsilon(1e-15));
      if (now[t].role == TensorRole::bn_gamma) CHECK(now[t].values[j] == was[t].values[j]);
    }
  CHECK(state.t == 1);
}

TEST_CASE("AdamW matches a hand-unrolled two-step update") {
  const auto spec = build_spec(ModelName::model1);
  TrainConfig cfg;
  for (double lambda : {1e-4, 0.0}) {
    cfg.weight_decay = lambda;
    auto params = init_params(spec, 9);
    auto expect = params;
    auto state = make_optimizer_state(params);
    Rng rng(2);
    std::vector<ModelParams> steps;
    for (int s = 0; s < 2; ++s) {
      auto g = zeros_like(params);
      for (auto& t : trainable_tensors(g)) fill_normal(t.values, rng, 0.3);
      steps.push_back(g);
    }
    const double lr = 2e-3;
    for (auto& g : steps) adamw_step(params, g, state, cfg, lr);

    // Scalar reference, one coordinate at a time.
    auto e = trainable_tensors(expect);
    auto g1 = trainable_tensors(steps[0]);
    auto g2 = trainable_tensors(steps[1]);
    auto got = trainable_tensors(params);
    for (std::size_t t = 0; t < e.size(); ++t)
      for (std::size_t j = 0; j < e[t].values.size(); ++j) {
        double th = e[t].values[j], m = 0, v = 0;
        const double gs[2] = {g1[t].values[j], g2[t].values[j]};
        for (int s = 1; s <= 2; ++s) {
          const double g = gs[s - 1];
          m = 0.9 * m + 0.1 * g;
          v = 0.99 * v + 0.01 * g * g;
          const double mhat = m / (1 - std::pow(0.9, s));
          const double vhat = v / (1 - std::pow(0.99, s));
          th = th - lr * mhat / (std::sqrt(vhat) + 1e-8);
          if (decays(e[t].role)) th = th - lr * lambda * th;
        }
        CHECK(std::abs(got[t].values[j] - th) < 1e-12);
      }
  }
}

TEST_CASE("AdamW rejects mismatched layouts") {
  auto a = init_params(build_spec(ModelName::model1), 1);
  auto b = init_params(build_spec(ModelName::model2), 1);
  auto state = make_optimizer_state(a);
  CHECK_THROWS_AS(adamw_step(a, b, state, TrainConfig{}, 1e-3), ContractError);
}

TEST_CASE("decision threshold calibration") {
  const std::vector<double> p{0.05, 0.1, 0.102, 0.11, 0.2, 0.9};
  const std::vector<int> y{0, 0, 0, 1, 1, 1};
  const auto cal = calibrate_threshold(p, y);
  CHECK(cal.tau_star == 0.1025);
  CHECK(cal.f1 == 1.0);

  // Everything at zero: only tau = 0 flags anything, F1 = 2P / (2P + N).
  const std::vector<double> zeros(10, 0.0);
  const std::vector<int> y2{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const auto c2 = calibrate_threshold(zeros, y2);
  CHECK(c2.tau_star == 0.0);
  CHECK(c2.f1 == doctest::Approx(6.0 / 13.0).epsilon(1e-15));

  const auto single = calibrate_threshold(p, std::vector<int>(6, 0));
  CHECK(single.single_class);
  CHECK(single.tau_star == 0.5);

  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(150);
    std::vector<double> s(n);
    std::vector<int> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      lab[i] = rng.bernoulli(0.3);
      s[i] = trial % 4 == 0 ? static_cast<double>(rng.below(401)) / 400.0 : std::clamp(rng.normal(0.3 + 0.4 * lab[i], 0.2), 0.0, 1.0);
    }
    lab[0] = 1;
    lab[1] = 0;
    const auto got = calibrate_threshold(s, lab);
    const auto [f1, tau] = brute_force_grid(s, lab);
    CAPTURE(trial);
    CHECK(got.tau_star == tau);
    CHECK(got.f1 == doctest::Approx(f1).epsilon(1e-12));
  }
}

TEST_CASE("training config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.rlrop_factor = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training is deterministic and keeps the best epoch") {
  const auto windows = small_synth(4, 60);
  const auto fold = first_fold(windows, 4);
  const auto spec = build_spec(ModelName::model1);
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 64;
  cfg.early_stop_patience = 6;
  cfg.rlrop_patience = 2;
  std::vector<EpochRecord> seen;
  const auto a = train(spec, windows, fold, cfg, {.fold_index = 0, .on_epoch = [&](const EpochRecord& r) { seen.push_back(r); }});
  const auto b = train(spec, windows, fold, cfg);
  CHECK(fingerprint(a.params) == fingerprint(b.params));
  CHECK(a.tau_star == b.tau_star);
  REQUIRE(a.history.size() == b.history.size());
  CHECK(seen.size() == a.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].epoch == i + 1);
    CHECK(a.history[i].learning_rate >= cfg.min_learning_rate);
    if (i) CHECK(a.history[i].learning_rate <= a.history[i - 1].learning_rate);
  }
  double best = 0;
  for (const auto& r : a.history) best = std::max(best, r.val_pr_auc);
  CHECK(a.history[a.best_epoch - 1].val_pr_auc == best);
  const auto scores = predict_gait(spec, a.params, windows, fold.validation);
  CHECK(average_precision(scores, labels_of(windows, fold.validation)) == best);
  CHECK(a.tau_star >= 0.0);
  CHECK(a.tau_star <= 1.0);

  const auto other = train(spec, windows, fold, cfg, {.fold_index = 1});
  CHECK(fingerprint(other.params) != fingerprint(a.params));
}

TEST_CASE("model 1 separates a synthetic fold within 50 epochs") {
  const auto windows = small_synth(6, 100);
  const auto fold = first_fold(windows, 6);
  TrainConfig cfg;
  cfg.max_epochs = 50;
  const auto m = train(build_spec(ModelName::model1), windows, fold, cfg);
  double best = 0;
  for (const auto& r : m.history) best = std::max(best, r.val_pr_auc);
  CHECK(best > 0.99);
}

TEST_CASE("training loss goes down for most seeds") {
  const auto windows = small_synth(3, 60);
  const auto fold = first_fold(windows, 3);
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.batch_size = 32;
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.seed = seed;
    const auto m = train(build_spec(ModelName::model1), windows, fold, cfg);
    decreased += m.history.back().train_loss < m.history.front().train_loss;
  }
  CHECK(decreased >= 18);
}

TEST_CASE("non-finite input aborts training with the offending layer") {
  auto windows = small_synth(3, 20);
  const auto fold = first_fold(windows, 3);
  windows[fold.train.front()].data[5] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.max_epochs = 2;
  try {
    (void)train(build_spec(ModelName::model1), windows, fold, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.layer == "input");
    CHECK(e.epoch == 1);
  }
}

TEST_CASE("history CSV") {
  const std::vector<EpochRecord> h{{1, 0.5, 0.75, 1e-3}, {2, 0.25, 0.875, 2e-4}};
  std::ostringstream out;
  write_history_csv(out, h);
  CHECK(out.str() == "epoch,train_loss,val_pr_auc,learning_rate\n1,0.5,0.75,0.001\n2,0.25,0.875,0.00020000000000000001\n");
}
