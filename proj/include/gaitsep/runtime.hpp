// SPDX-License-Identifier: Apache-2.0
//
// Forward-only float32 runtime for exported detectors.
//
// Model binary (`.gmdl`), little-endian:
//     "GMDL" | version u16 (=1) | model code u8 | input length u16 | input channels u8 | tau* f32
//     layer count u16, then per layer (19 bytes):
//         kind u8 | input u16 | skip u16 | kernel u16 | filters u16 | pool u16 | flags u16
//         | dropout permille u16 | weight offset u32
//     blob byte count u32 | blob of f32
// Layer references use 0xFFFF for the model input. flags bit 0 = bias. The
// blob holds each layer's tensors in layer order: depthwise, pointwise, bias,
// gamma, beta, running mean, running variance, dense weights, dense bias.
// Batch-norm is stored raw and folded into scale/shift at load time.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitsep/data.hpp"
#include "gaitsep/model.hpp"

namespace gaitsep {

inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::uint16_t kNoLayer = 0xFFFF;

enum class LoadErrorCode {
  bad_magic,
  version_mismatch,
  corrupt_header,
  truncated,
  unknown_layer_kind,
  inconsistent_layout,
  invalid_geometry,
};

std::string_view to_string(LoadErrorCode code);

class LoadError : public std::runtime_error {
 public:
  LoadError(LoadErrorCode code, const std::string& what) : std::runtime_error(what), code(code) {}
  LoadErrorCode code;
};

/// Serialises spec + params + tau*. Weights are rounded to nearest float32.
/// Identical inputs give identical bytes. Throws ContractError when params do
/// not match `spec`.
std::vector<std::uint8_t> export_model(const ModelSpec& spec, const ModelParams& params, double tau_star);

struct ModelBinaryContents {
  ModelSpec spec;
  ModelParams params;  // float32 values widened to double
  float tau_star = 0.5f;
};

/// Parses and validates a model binary. Throws LoadError.
ModelBinaryContents decode_model(std::span<const std::uint8_t> bytes);

/// Number of float32 values in the weight blob.
std::size_t blob_float_count(const ModelSpec& spec);

/// Static activation layout. Offsets and sizes are in floats; every region is
/// 32-byte aligned relative to the arena start.
struct ArenaRegion {
  std::size_t offset = 0;
  std::size_t size = 0;
  int first_step = 0;  // -1 = model input copy
  int last_step = 0;
};

struct ArenaPlan {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  struct Slot {
    std::size_t input = kNone;
    std::size_t skip = kNone;
    std::size_t output = kNone;
    std::size_t scratch = kNone;
  };

  std::size_t buffer_bytes = 0;    // arena size
  std::size_t live_peak_bytes = 0; // max over steps of the live regions' total
  std::size_t input_offset = 0;
  std::vector<ArenaRegion> regions;
  std::vector<Slot> layers;
};

/// Lifetime-aware first-fit layout; element-wise layers run in place when
/// their input has no later reader.
ArenaPlan plan_arena(const ModelSpec& spec);

/// True when no two regions with overlapping lifetimes share memory.
bool arena_plan_is_valid(const ArenaPlan& plan);

/// Per-thread activation memory for one RuntimeModel.
class Arena {
 public:
  Arena() = default;
  explicit Arena(std::size_t floats) : buffer_(floats, 0.0f) {}
  std::span<float> data() noexcept { return buffer_; }
  std::size_t size() const noexcept { return buffer_.size(); }

 private:
  std::vector<float> buffer_;
};

struct Inference {
  float p_gait = 0;
  float p_non_gait = 0;
  Label decision = Label::non_gait;
};

struct LoadOptions {
  bool fold_batchnorm = true;
};

/// Immutable after load and safe to share across threads; each thread
/// brings its own Arena.
class RuntimeModel {
 public:
  static RuntimeModel load(std::span<const std::uint8_t> bytes, const LoadOptions& options = {});

  /// Zero heap allocation. Throws ContractError on a window that is not
  /// (length x channels) or an arena smaller than the plan.
  Inference infer(Arena& arena, std::span<const float> window) const;

  Arena make_arena() const { return Arena(plan_.buffer_bytes / sizeof(float)); }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ArenaPlan& plan() const noexcept { return plan_; }
  float tau_star() const noexcept { return tau_; }
  std::size_t flash_bytes() const noexcept { return flash_bytes_; }
  std::uint64_t macs() const noexcept { return macs_; }

 private:
  struct Layer {
    LayerKind kind{};
    std::size_t in_len = 0, in_ch = 0, out_len = 0, out_ch = 0;
    std::size_t kernel = 0, pad = 0, pool = 0;
    // Offsets into weights_; kNone when absent.
    std::size_t w0 = ArenaPlan::kNone, w1 = ArenaPlan::kNone, w2 = ArenaPlan::kNone, w3 = ArenaPlan::kNone;
    float epsilon = 1e-3f;
  };

  ModelSpec spec_;
  ArenaPlan plan_;
  std::vector<Layer> layers_;
  std::vector<float> weights_;
  float tau_ = 0.5f;
  bool folded_ = true;
  std::size_t flash_bytes_ = 0;
  std::uint64_t macs_ = 0;
};

struct ProfileReport {
  std::uint64_t macs = 0;
  std::size_t peak_arena_bytes = 0;
  std::size_t flash_bytes = 0;
  double mean_latency_us = 0;
  double median_latency_us = 0;
  double p95_latency_us = 0;
};

/// Times n_reps calls of infer after 10 discarded warm-up calls on a fixed
/// pseudo-random window. Throws std::invalid_argument when n_reps < 100.
ProfileReport profile(const RuntimeModel& model, std::size_t n_reps);

}  // namespace gaitsep
