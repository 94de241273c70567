// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "gaitsep/layers.hpp"
#include "gaitsep/simd.hpp"
#include "support.hpp"

using namespace gaitsep;
using namespace testing_support;

namespace {

SepConvParams random_sepconv(Rng& rng, std::size_t k, std::size_t in, std::size_t out, bool bias) {
  SepConvParams p(k, in, out, bias);
  fill_normal(p.depthwise, rng);
  fill_normal(p.pointwise, rng);
  fill_normal(p.bias, rng);
  return p;
}

/// Sum of grad_output-weighted outputs; its gradient is exactly what the
/// backward kernels compute for an upstream gradient of grad_output.
double contract(const Feature1D& out, const Feature1D& g) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.data[i] * g.data[i];
  return s;
}

template <typename F>
void fd_check(std::vector<double>& values, std::span<const double> analytic, F&& objective, std::size_t max_checks = 200) {
  REQUIRE(values.size() == analytic.size());
  const std::size_t n = std::min(values.size(), max_checks);
  for (std::size_t i = 0; i < n; ++i) {
    const double orig = values[i];
    values[i] = orig + 1e-6;
    const double lp = objective();
    values[i] = orig - 1e-6;
    const double lm = objective();
    values[i] = orig;
    const double numeric = (lp - lm) / 2e-6;
    CHECK(relative_error(analytic[i], numeric) < 1e-4);
  }
}

}  // namespace

TEST_CASE("sepconv forward matches a hand convolution") {
  Feature1D x(4, 1);
  x.data = {1, 2, 3, 4};
  SepConvParams p(3, 1, 1, false);
  p.depthwise = {1, 1, 1};
  p.pointwise = {1};
  const auto y = sepconv1d_forward(x, p);
  REQUIRE(y.length == 4);
  CHECK(y.data == std::vector<double>{3, 6, 9, 7});
}

TEST_CASE("sepconv with a centred impulse and identity pointwise is the identity") {
  Rng rng(1);
  const auto x = random_feature(rng, 2, 11, 3);
  SepConvParams p(5, 3, 3, true);
  for (std::size_t c = 0; c < 3; ++c) {
    p.depthwise[same_pad_left(5) * 3 + c] = 1.0;
    p.pointwise[c * 3 + c] = 1.0;
  }
  const auto y = sepconv1d_forward(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-15));
}

TEST_CASE("even kernels pad floor((k-1)/2) on the left") {
  CHECK(same_pad_left(10) == 4);
  CHECK(same_pad_left(9) == 4);
  CHECK(same_pad_left(5) == 2);
  // k = 2, taps (left, right) = (1, 0): y[t] = x[t] since pad_left = 0.
  Feature1D x(3, 1);
  x.data = {1, 2, 3};
  SepConvParams p(2, 1, 1, false);
  p.depthwise = {1, 0};
  p.pointwise = {1};
  CHECK(sepconv1d_forward(x, p).data == std::vector<double>{1, 2, 3});
}

TEST_CASE("sepconv parameter count reproduces the first baseline layer") {
  CHECK(SepConvParams(10, 3, 100, true).param_count() == 430);
  CHECK(SepConvParams(10, 100, 40, true).param_count() == 5040);
}

TEST_CASE("sepconv is linear in input and parameters") {
  Rng rng(2);
  const auto x = random_feature(rng, 2, 9, 2);
  auto p = random_sepconv(rng, 3, 2, 4, false);
  const auto y = sepconv1d_forward(x, p);
  Feature1D x3 = x;
  for (auto& v : x3.data) v *= 3.0;
  const auto y3 = sepconv1d_forward(x3, p);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y3.data[i] - 3.0 * y.data[i]) < 1e-12);
  SepConvParams p2 = p;
  for (auto& v : p2.pointwise) v *= -2.0;
  const auto y2 = sepconv1d_forward(x, p2);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y2.data[i] + 2.0 * y.data[i]) < 1e-12);
}

TEST_CASE("sepconv rejects a channel mismatch") {
  Feature1D x(5, 2);
  SepConvParams p(3, 3, 4, false);
  CHECK_THROWS_AS(sepconv1d_forward(x, p), ContractError);
  Feature1D g(5, 5);
  CHECK_THROWS_AS(sepconv1d_backward(Feature1D(5, 3), p, g), ContractError);
}

TEST_CASE("sepconv backward matches finite differences") {
  Rng rng(3);
  auto x = random_feature(rng, 1, 8, 2);
  auto p = random_sepconv(rng, 3, 2, 4, true);
  const auto g = random_feature(rng, 1, 8, 4);
  const auto grads = sepconv1d_backward(x, p, g);
  auto obj = [&] { return contract(sepconv1d_forward(x, p), g); };
  fd_check(x.data, grads.input.data, obj);
  fd_check(p.depthwise, grads.params.depthwise, obj);
  fd_check(p.pointwise, grads.params.pointwise, obj);
  fd_check(p.bias, grads.params.bias, obj);
}

TEST_CASE("sepconv backward on a batch with an even kernel matches finite differences") {
  Rng rng(4);
  auto x = random_feature(rng, 3, 12, 3);
  auto p = random_sepconv(rng, 10, 3, 5, false);
  const auto g = random_feature(rng, 3, 12, 5);
  const auto grads = sepconv1d_backward(x, p, g);
  auto obj = [&] { return contract(sepconv1d_forward(x, p), g); };
  fd_check(x.data, grads.input.data, obj);
  fd_check(p.depthwise, grads.params.depthwise, obj);
  fd_check(p.pointwise, grads.params.pointwise, obj);
}

TEST_CASE("sepconv backward of a zero gradient is zero") {
  Rng rng(5);
  const auto x = random_feature(rng, 1, 8, 2);
  const auto p = random_sepconv(rng, 3, 2, 4, true);
  const auto grads = sepconv1d_backward(x, p, Feature1D(1, 8, 4));
  for (double v : grads.input.data) CHECK(v == 0.0);
  for (double v : grads.params.depthwise) CHECK(v == 0.0);
  for (double v : grads.params.pointwise) CHECK(v == 0.0);
  for (double v : grads.params.bias) CHECK(v == 0.0);
}

TEST_CASE("sepconv input gradient of an impulse stays within the taps covering t = 0") {
  Rng rng(6);
  const auto x = random_feature(rng, 1, 10, 1);
  SepConvParams p(3, 1, 1, false);
  p.depthwise = {0.5, -1.0, 2.0};
  p.pointwise = {1.0};
  Feature1D g(10, 1);
  g.data[0] = 1.0;
  const auto grads = sepconv1d_backward(x, p, g);
  // Output 0 reads inputs t - 1 .. t + 1 = {pad, 0, 1}.
  CHECK(grads.input.data[0] == doctest::Approx(-1.0));
  CHECK(grads.input.data[1] == doctest::Approx(2.0));
  for (std::size_t t = 2; t < 10; ++t) CHECK(grads.input.data[t] == 0.0);
}

TEST_CASE("conv1x1 forward and backward") {
  Feature1D x(1, 2);
  x.data = {1, 2};
  Conv1x1Params w(2, 1);
  w.weights = {1, 1};
  CHECK(conv1x1_forward(x, w).data == std::vector<double>{3});
  CHECK(Conv1x1Params(3, 8).param_count() == 24);

  Rng rng(7);
  auto xr = random_feature(rng, 2, 7, 3);
  Conv1x1Params wr(3, 5);
  fill_normal(wr.weights, rng);
  const auto g = random_feature(rng, 2, 7, 5);
  const auto grads = conv1x1_backward(xr, wr, g);
  auto obj = [&] { return contract(conv1x1_forward(xr, wr), g); };
  fd_check(xr.data, grads.input.data, obj);
  fd_check(wr.weights, grads.params.weights, obj);
  CHECK_THROWS_AS(conv1x1_forward(Feature1D(4, 2), wr), ContractError);
}

TEST_CASE("conv1x1 with identity weights is the identity") {
  Rng rng(8);
  const auto x = random_feature(rng, 1, 6, 4);
  Conv1x1Params w(4, 4);
  for (std::size_t c = 0; c < 4; ++c) w.weights[c * 4 + c] = 1.0;
  CHECK(conv1x1_forward(x, w).data == x.data);
}

TEST_CASE("batchnorm normalises a two-value channel") {
  Feature1D x(2, 1);
  x.data = {1, 3};
  BatchNormParams p(1);
  const auto r = batchnorm_forward(x, p, Mode::train);
  const double s = 1.0 / std::sqrt(1.0 + BatchNormParams::kEpsilon);
  CHECK(r.output.data[0] == doctest::Approx(-s).epsilon(1e-14));
  CHECK(r.output.data[1] == doctest::Approx(s).epsilon(1e-14));
  CHECK(r.running_mean[0] == doctest::Approx(0.01 * 2.0));
  CHECK(r.running_var[0] == doctest::Approx(0.99 * 1.0 + 0.01 * 1.0));
  CHECK(BatchNormParams(8).param_count() == 16);
}

TEST_CASE("batchnorm infer mode uses running statistics and refuses missing ones") {
  Feature1D x(2, 1);
  x.data = {1, 3};
  BatchNormParams p(1);
  p.running_mean = {1.0};
  p.running_var = {4.0};
  p.gamma = {2.0};
  p.beta = {0.5};
  const auto r = batchnorm_forward(x, p, Mode::infer);
  CHECK(r.output.data[1] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-3) + 0.5));
  p.running_var.clear();
  CHECK_THROWS(batchnorm_forward(x, p, Mode::infer));
}

TEST_CASE("batchnorm backward matches finite differences") {
  Rng rng(9);
  auto x = random_feature(rng, 3, 5, 2);
  BatchNormParams p(2);
  p.gamma = {1.3, 0.7};
  p.beta = {0.1, -0.2};
  const auto g = random_feature(rng, 3, 5, 2);
  const auto fw = batchnorm_forward(x, p, Mode::train);
  const auto grads = batchnorm_backward(fw.cache, p, g);
  auto obj = [&] { return contract(batchnorm_forward(x, p, Mode::train).output, g); };
  fd_check(x.data, grads.input.data, obj);
  fd_check(p.gamma, grads.gamma, obj);
  fd_check(p.beta, grads.beta, obj);
}

TEST_CASE("pooling examples") {
  Feature1D x(6, 1);
  x.data = {1, 5, 2, 7, 0, 0};
  CHECK(maxpool1d_forward(x, 3).data == std::vector<double>{5, 7});
  Feature1D a(2, 1);
  a.data = {2, 4};
  CHECK(avgpool1d_forward(a, 2).data == std::vector<double>{3});
  CHECK(maxpool1d_forward(Feature1D(60, 100), 3).length == 20);
  CHECK(avgpool1d_forward(Feature1D(7, 2), 2).length == 3);  // remainder dropped
  Feature1D c(1, 9, 2, 4.25);
  const auto gap = global_avg_pool(c);
  CHECK(gap(0, 0) == 4.25);
  CHECK(gap(0, 1) == 4.25);
  CHECK_THROWS(maxpool1d_forward(x, 0));
  CHECK_THROWS(avgpool1d_forward(x, 0));
}

TEST_CASE("maxpool backward routes to the first maximum") {
  Feature1D x(6, 1);
  x.data = {3, 3, 1, 0, 2, 2};
  Feature1D g(2, 1);
  g.data = {1.5, -2.0};
  const auto gi = maxpool1d_backward(x, 3, g);
  CHECK(gi.data == std::vector<double>{1.5, 0, 0, 0, -2.0, 0});
}

TEST_CASE("pooling and relu backward match finite differences") {
  Rng rng(10);
  auto x = random_feature(rng, 2, 13, 3);
  const auto g_max = random_feature(rng, 2, 4, 3);
  const auto g_avg = random_feature(rng, 2, 6, 3);
  const auto g_relu = random_feature(rng, 2, 13, 3);
  fd_check(x.data, maxpool1d_backward(x, 3, g_max).data, [&] { return contract(maxpool1d_forward(x, 3), g_max); });
  fd_check(x.data, avgpool1d_backward(x, 2, g_avg).data, [&] { return contract(avgpool1d_forward(x, 2), g_avg); });
  fd_check(x.data, relu_backward(x, g_relu).data, [&] { return contract(relu_forward(x), g_relu); });
  Matrix g_gap(2, 3);
  for (auto& v : g_gap.data) v = rng.normal();
  const auto gi = global_avg_pool_backward(x, g_gap);
  fd_check(x.data, gi.data, [&] {
    const auto m = global_avg_pool(x);
    double s = 0;
    for (std::size_t i = 0; i < m.data.size(); ++i) s += m.data[i] * g_gap.data[i];
    return s;
  });
}

TEST_CASE("avgpool backward divides uniformly") {
  Feature1D x(4, 1);
  Feature1D g(2, 1);
  g.data = {2.0, 4.0};
  CHECK(avgpool1d_backward(x, 2, g).data == std::vector<double>{1, 1, 2, 2});
}

TEST_CASE("softmax closed forms and invariances") {
  Matrix l(2, 2);
  l.data = {0.3, 0.3, std::log(3.0), 0.0};
  const auto p = softmax(l);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(p(1, 1) == doctest::Approx(0.25).epsilon(1e-14));

  Rng rng(11);
  Matrix r(50, 2);
  for (auto& v : r.data) v = rng.normal(0.0, 30.0);
  const auto pr = softmax(r);
  Matrix shifted = r;
  for (auto& v : shifted.data) v += 123.0;
  const auto ps = softmax(shifted);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(std::abs(pr(i, 0) + pr(i, 1) - 1.0) < 1e-12);
    CHECK(pr(i, 0) > 0.0);
    CHECK(std::abs(pr(i, 0) - ps(i, 0)) < 1e-9);
  }
  CHECK(DenseParams(40, 2).param_count() == 82);
}

TEST_CASE("weighted cross-entropy closed forms") {
  const std::vector<double> half{0.5, 0.5}, one_zero{1.0, 0.0}, gait{0.0, 1.0};
  CHECK(weighted_crossentropy(one_zero, one_zero, 1.0) == 0.0);
  CHECK(weighted_crossentropy(half, gait, 2.0) == doctest::Approx(1.386294361).epsilon(1e-9));
  CHECK(weighted_crossentropy(half, gait, 0.0) == 0.0);
  CHECK(std::isfinite(weighted_crossentropy(one_zero, gait, 1.0)));  // clamped at 1e-12
}

TEST_CASE("dense backward with fused cross-entropy matches finite differences") {
  Rng rng(12);
  Matrix x(4, 5);
  for (auto& v : x.data) v = rng.normal();
  DenseParams p(5, 2);
  fill_normal(p.weights, rng);
  fill_normal(p.bias, rng);
  const std::vector<int> labels{0, 1, 1, 0};
  const std::vector<double> w{0.8, 1.3, 1.3, 0.8};
  auto loss = [&] { return batch_crossentropy(dense_softmax_forward(x, p), labels, w); };
  const auto g = crossentropy_grad_logits(dense_softmax_forward(x, p), labels, w);
  const auto grads = dense_backward(x, p, g);
  fd_check(p.weights, grads.params.weights, loss);
  fd_check(p.bias, grads.params.bias, loss);
  fd_check(x.data, grads.input.data, loss);
}

// --- SIMD equivalence ------------------------------------------------------

namespace {

template <typename T>
std::vector<T> random_values(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <typename T>
void check_close(const std::vector<T>& a, const std::vector<T>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(1.0, std::abs(static_cast<double>(a[i])));
    CHECK(std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) <= tol * scale);
  }
}

template <typename T>
void compare_tables(const simd::KernelTable<T>& ref, const simd::KernelTable<T>& vec, double tol) {
  Rng rng(sizeof(T) * 1000 + 7);
  // Shapes straddle the vector widths (4 doubles / 8 floats) and their tails.
  const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 3, 100}, {60, 100, 40}, {30, 8, 16}, {9, 13, 2}};
  for (const auto& d : dims) {
    const std::size_t m = d[0], k = d[1], n = d[2];
    const auto a = random_values<T>(rng, m * k), b = random_values<T>(rng, k * n), bias = random_values<T>(rng, n);
    std::vector<T> o1(m * n), o2(m * n);
    ref.matmul(m, k, n, a.data(), b.data(), bias.data(), o1.data());
    vec.matmul(m, k, n, a.data(), b.data(), bias.data(), o2.data());
    check_close(o1, o2, tol);
    ref.matmul(m, k, n, a.data(), b.data(), nullptr, o1.data());
    vec.matmul(m, k, n, a.data(), b.data(), nullptr, o2.data());
    check_close(o1, o2, tol);

    const auto bt = random_values<T>(rng, n * k);
    ref.matmul_nt(m, k, n, a.data(), bt.data(), o1.data());
    vec.matmul_nt(m, k, n, a.data(), bt.data(), o2.data());
    check_close(o1, o2, tol);

    const auto g = random_values<T>(rng, m * n);
    std::vector<T> acc1 = random_values<T>(rng, k * n), acc2 = acc1;
    ref.matmul_tn_acc(m, k, n, a.data(), g.data(), acc1.data());
    vec.matmul_tn_acc(m, k, n, a.data(), g.data(), acc2.data());
    check_close(acc1, acc2, tol);
  }
  const std::size_t conv[][3] = {{60, 3, 10}, {20, 100, 10}, {30, 8, 9}, {5, 1, 3}, {11, 13, 7}, {4, 2, 5}};
  for (const auto& c : conv) {
    const std::size_t len = c[0], ch = c[1], ks = c[2], pad = (ks - 1) / 2;
    const auto in = random_values<T>(rng, len * ch), kern = random_values<T>(rng, ks * ch),
               g = random_values<T>(rng, len * ch);
    std::vector<T> o1(len * ch), o2(len * ch);
    ref.depthwise(len, ch, ks, pad, in.data(), kern.data(), o1.data());
    vec.depthwise(len, ch, ks, pad, in.data(), kern.data(), o2.data());
    check_close(o1, o2, tol);
    ref.depthwise_input_grad(len, ch, ks, pad, g.data(), kern.data(), o1.data());
    vec.depthwise_input_grad(len, ch, ks, pad, g.data(), kern.data(), o2.data());
    check_close(o1, o2, tol);
    std::vector<T> k1 = random_values<T>(rng, ks * ch), k2 = k1;
    ref.depthwise_kernel_grad_acc(len, ch, ks, pad, in.data(), g.data(), k1.data());
    vec.depthwise_kernel_grad_acc(len, ch, ks, pad, in.data(), g.data(), k2.data());
    check_close(k1, k2, tol);
  }
}

}  // namespace

TEST_CASE("AVX2 kernels agree with the scalar reference") {
  const auto* f = simd::avx2_kernels<float>();
  const auto* d = simd::avx2_kernels<double>();
  if (f == nullptr || d == nullptr) {
    MESSAGE("AVX2 variant unavailable on this CPU or build; only the scalar table is exercised");
    return;
  }
  compare_tables(simd::scalar_kernels<double>(), *d, 1e-12);
  compare_tables(simd::scalar_kernels<float>(), *f, 2e-5);
}

TEST_CASE("a kernel table is active") {
  const std::string name = simd::active_isa();
  CHECK((name == "scalar" || name == "avx2"));
}
