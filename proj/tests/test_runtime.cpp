// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <new>

#include "gaitsep/runtime.hpp"
#include "support.hpp"

using namespace gaitsep;
using namespace testing_support;

// Counts every global allocation in this binary so inference can be shown
// to be allocation-free.
namespace {
std::atomic<std::size_t> g_allocations{0};
}

void* operator new(std::size_t n) {
  g_allocations.fetch_add(1, std::memory_order_relaxed);
  if (void* p = std::malloc(n ? n : 1)) return p;
  throw std::bad_alloc();
}
void* operator new[](std::size_t n) { return operator new(n); }
void* operator new(std::size_t n, std::align_val_t a) {
  g_allocations.fetch_add(1, std::memory_order_relaxed);
  const auto al = static_cast<std::size_t>(a);
  if (void* p = std::aligned_alloc(al, (n + al - 1) / al * al)) return p;
  throw std::bad_alloc();
}
void* operator new[](std::size_t n, std::align_val_t a) { return operator new(n, a); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }

namespace {

constexpr ModelName kAll[] = {ModelName::baseline, ModelName::model1, ModelName::model2};

ModelParams trained_like(const ModelSpec& spec, std::uint64_t seed) {
  auto p = init_params(spec, seed);
  Rng rng(seed + 100);
  perturb_params(p, rng);
  return p;
}

std::vector<float> as_float(const Window& w) { return {w.data.begin(), w.data.end()}; }

LoadErrorCode load_code(std::vector<std::uint8_t> bytes) {
  try {
    (void)RuntimeModel::load(bytes);
  } catch (const LoadError& e) {
    return e.code;
  }
  FAIL("model loaded");
  return LoadErrorCode::bad_magic;
}

void put_u16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = static_cast<std::uint8_t>(v & 0xFF);
  b[at + 1] = static_cast<std::uint8_t>(v >> 8);
}

}  // namespace

TEST_CASE("export is deterministic and survives a load round trip") {
  for (auto name : kAll) {
    CAPTURE(to_string(name));
    const auto spec = build_spec(name);
    const auto params = trained_like(spec, 3);
    const auto bytes = export_model(spec, params, 0.37);
    CHECK(export_model(spec, params, 0.37) == bytes);
    const auto decoded = decode_model(bytes);
    CHECK(decoded.tau_star == 0.37f);
    CHECK(decoded.spec.layers.size() == spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) CHECK(decoded.spec.layers[i].name == spec.layers[i].name);
    CHECK(export_model(decoded.spec, decoded.params, decoded.tau_star) == bytes);
  }
  const auto m1 = build_spec(ModelName::model1);
  CHECK(blob_float_count(m1) == 353);
  const auto bytes = export_model(m1, init_params(m1, 1), 0.5);
  CHECK(bytes.size() == 16 + 19 * m1.layers.size() + 4 + 353 * 4);
  CHECK_THROWS_AS(export_model(m1, init_params(build_spec(ModelName::model2), 1), 0.5), ContractError);
}

TEST_CASE("malformed model binaries are rejected with a reason") {
  const auto spec = build_spec(ModelName::model1);
  const auto good = export_model(spec, init_params(spec, 2), 0.5);
  CHECK_NOTHROW((void)RuntimeModel::load(good));

  auto b = good;
  b[0] = 'X';
  CHECK(load_code(b) == LoadErrorCode::bad_magic);

  b = good;
  put_u16(b, 4, 7);
  try {
    (void)RuntimeModel::load(b);
    FAIL("loaded a future version");
  } catch (const LoadError& e) {
    CHECK(e.code == LoadErrorCode::version_mismatch);
    const std::string msg = e.what();
    CHECK(msg.find('7') != std::string::npos);
    CHECK(msg.find('1') != std::string::npos);
  }

  b = good;
  b[6] = 9;  // model code
  CHECK(load_code(b) == LoadErrorCode::corrupt_header);
  b = good;
  const float two = 2.0f;
  std::memcpy(b.data() + 10, &two, 4);  // tau*
  CHECK(load_code(b) == LoadErrorCode::corrupt_header);

  b = good;
  b[16] = 42;  // first layer kind
  CHECK(load_code(b) == LoadErrorCode::unknown_layer_kind);

  b = good;
  put_u16(b, 17, 3);  // first layer reads a later one
  CHECK(load_code(b) == LoadErrorCode::invalid_geometry);
  b = good;
  put_u16(b, 16 + 5, 0);  // zero kernel size
  CHECK(load_code(b) == LoadErrorCode::invalid_geometry);

  b = good;
  b[16 + 19 + 15] ^= 4;  // second layer's weight offset
  CHECK(load_code(b) == LoadErrorCode::inconsistent_layout);
  b = good;
  b.push_back(0);
  CHECK(load_code(b) == LoadErrorCode::inconsistent_layout);

  b = good;
  b.resize(b.size() - 4);
  CHECK(load_code(b) == LoadErrorCode::truncated);
  b.resize(12);
  CHECK(load_code(b) == LoadErrorCode::truncated);
}

TEST_CASE("float runtime matches the double-precision model") {
  Rng rng(17);
  for (auto name : kAll) {
    CAPTURE(to_string(name));
    const auto spec = build_spec(name);
    const auto params = trained_like(spec, 5);
    const auto model = RuntimeModel::load(export_model(spec, params, 0.5));
    const auto unfolded = RuntimeModel::load(export_model(spec, params, 0.5), {.fold_batchnorm = false});
    auto arena = model.make_arena();
    auto arena2 = unfolded.make_arena();
    std::vector<Window> windows;
    for (int i = 0; i < 1000; ++i) windows.push_back(random_window(rng, 0.1 + 0.002 * i));
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto reference = predict(spec, params, to_batch(windows, idx));
    double worst = 0, worst_fold = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      const auto x = as_float(windows[i]);
      const auto r = model.infer(arena, x);
      const auto u = unfolded.infer(arena2, x);
      worst = std::max(worst, std::abs(static_cast<double>(r.p_gait) - reference(i, 1)));
      worst_fold = std::max(worst_fold, std::abs(static_cast<double>(r.p_gait) - u.p_gait));
      CHECK(std::abs(r.p_gait + r.p_non_gait - 1.0f) < 1e-6f);
      CHECK(r.decision == (r.p_gait >= 0.5f ? Label::gait : Label::non_gait));
    }
    CHECK(worst < 1e-5);
    CHECK(worst_fold < 1e-6);
  }
}

TEST_CASE("tau of zero flags every window as gait") {
  const auto spec = build_spec(ModelName::model2);
  const auto model = RuntimeModel::load(export_model(spec, trained_like(spec, 8), 0.0));
  auto arena = model.make_arena();
  Rng rng(2);
  for (int i = 0; i < 200; ++i) CHECK(model.infer(arena, as_float(random_window(rng))).decision == Label::gait);
}

TEST_CASE("inference does not allocate") {
  Rng rng(4);
  const auto window = as_float(random_window(rng));
  for (auto name : kAll) {
    const auto spec = build_spec(name);
    const auto model = RuntimeModel::load(export_model(spec, trained_like(spec, 1), 0.5));
    auto arena = model.make_arena();
    float sink = 0;
    const std::size_t before = g_allocations.load();
    for (int i = 0; i < 100; ++i) sink += model.infer(arena, window).p_gait;
    const std::size_t after = g_allocations.load();
    CHECK(after == before);
    CHECK(sink > 0);
  }
}

TEST_CASE("infer checks its inputs") {
  const auto spec = build_spec(ModelName::model1);
  const auto model = RuntimeModel::load(export_model(spec, init_params(spec, 1), 0.5));
  auto arena = model.make_arena();
  std::vector<float> short_window(179, 0.0f);
  CHECK_THROWS_AS(model.infer(arena, short_window), ContractError);
  Arena tiny(4);
  CHECK_THROWS_AS(model.infer(tiny, std::vector<float>(180, 0.0f)), ContractError);
}

TEST_CASE("arena plans") {
  std::size_t sizes[3] = {};
  for (auto name : kAll) {
    const auto spec = build_spec(name);
    const auto plan = plan_arena(spec);
    CHECK(arena_plan_is_valid(plan));
    CHECK(plan.live_peak_bytes <= plan.buffer_bytes);
    for (const auto& r : plan.regions) CHECK((r.offset * sizeof(float)) % 32 == 0);
    sizes[static_cast<int>(name)] = plan.buffer_bytes;

    // Pile every region onto offset 0: some pair must now collide.
    auto broken = plan;
    for (auto& r : broken.regions) r.offset = 0;
    CHECK_FALSE(arena_plan_is_valid(broken));
  }
  CHECK(sizes[static_cast<int>(ModelName::model1)] < sizes[static_cast<int>(ModelName::baseline)]);
  CHECK(sizes[static_cast<int>(ModelName::model2)] < sizes[static_cast<int>(ModelName::baseline)]);
}

TEST_CASE("profile reports resources and latency") {
  CHECK_THROWS_AS(profile(RuntimeModel::load(export_model(build_spec(ModelName::model1),
                                                           init_params(build_spec(ModelName::model1), 1), 0.5)),
                          99),
                  std::invalid_argument);
  ProfileReport r[3];
  for (auto name : kAll) {
    const auto spec = build_spec(name);
    const auto model = RuntimeModel::load(export_model(spec, init_params(spec, 1), 0.5));
    auto& p = r[static_cast<int>(name)];
    p = profile(model, 300);
    CHECK(p.macs == count_macs(spec));
    CHECK(p.flash_bytes >= blob_float_count(spec) * sizeof(float));
    CHECK(p.peak_arena_bytes == model.plan().buffer_bytes);
    CHECK(p.median_latency_us > 0);
    CHECK(p.p95_latency_us >= p.median_latency_us);
  }
  const auto& m1 = r[static_cast<int>(ModelName::model1)];
  const auto& b = r[static_cast<int>(ModelName::baseline)];
  CHECK(m1.flash_bytes < b.flash_bytes);
  CHECK(m1.median_latency_us < b.median_latency_us);
}
