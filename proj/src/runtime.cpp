// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include "gaitsep/detail/bytes.hpp"
#include "gaitsep/simd.hpp"

namespace gaitsep {

std::string_view to_string(LoadErrorCode code) {
  switch (code) {
    case LoadErrorCode::bad_magic: return "bad_magic";
    case LoadErrorCode::version_mismatch: return "version_mismatch";
    case LoadErrorCode::corrupt_header: return "corrupt_header";
    case LoadErrorCode::truncated: return "truncated";
    case LoadErrorCode::unknown_layer_kind: return "unknown_layer_kind";
    case LoadErrorCode::inconsistent_layout: return "inconsistent_layout";
    case LoadErrorCode::invalid_geometry: return "invalid_geometry";
  }
  return "unknown";
}

namespace {

constexpr std::size_t kAlignFloats = 8;  // 32 bytes

std::uint16_t layer_ref(int idx) { return idx == kModelInput ? kNoLayer : static_cast<std::uint16_t>(idx); }
int layer_ref(std::uint16_t raw) { return raw == kNoLayer ? kModelInput : static_cast<int>(raw); }

std::uint16_t narrow16(std::size_t v, const char* what) {
  if (v > 0xFFFF) throw ContractError(std::string("export: ") + what + " exceeds 65535");
  return static_cast<std::uint16_t>(v);
}

/// Per-layer tensors in blob order.
std::vector<const std::vector<double>*> blob_tensors(const LayerParams& lp) {
  std::vector<const std::vector<double>*> out;
  if (const auto* s = std::get_if<SepConvParams>(&lp)) {
    out = {&s->depthwise, &s->pointwise};
    if (s->has_bias()) out.push_back(&s->bias);
  } else if (const auto* c = std::get_if<Conv1x1Params>(&lp)) {
    out = {&c->weights};
  } else if (const auto* b = std::get_if<BatchNormParams>(&lp)) {
    out = {&b->gamma, &b->beta, &b->running_mean, &b->running_var};
  } else if (const auto* d = std::get_if<DenseParams>(&lp)) {
    out = {&d->weights, &d->bias};
  }
  return out;
}

std::size_t layer_blob_floats(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::sepconv:
      return l.kernel_size * in.channels + in.channels * l.filters + (l.bias ? l.filters : 0);
    case LayerKind::conv1x1: return in.channels * l.filters;
    case LayerKind::batchnorm: return 4 * in.channels;
    case LayerKind::dense_softmax: return in.channels * l.filters + l.filters;
    default: return 0;
  }
}

Shape source_shape(const ModelSpec& spec, const std::vector<Shape>& shapes, int idx) {
  return idx == kModelInput ? Shape{spec.input_length, spec.input_channels, false}
                            : shapes[static_cast<std::size_t>(idx)];
}

bool elementwise(LayerKind k) {
  return k == LayerKind::batchnorm || k == LayerKind::relu || k == LayerKind::dropout ||
         k == LayerKind::residual_add;
}

std::size_t round_up(std::size_t n) { return (n + kAlignFloats - 1) / kAlignFloats * kAlignFloats; }

}  // namespace

std::size_t blob_float_count(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::size_t n = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    n += layer_blob_floats(spec.layers[i], source_shape(spec, shapes, spec.layers[i].input));
  return n;
}

std::vector<std::uint8_t> export_model(const ModelSpec& spec, const ModelParams& params, double tau_star) {
  const auto shapes = infer_shapes(spec);
  if (params.layers.size() != spec.layers.size())
    throw ContractError("export: params have " + std::to_string(params.layers.size()) + " layers, spec has " +
                        std::to_string(spec.layers.size()));
  if (!(tau_star >= 0.0 && tau_star <= 1.0)) throw ContractError("export: tau* must lie in [0, 1]");

  detail::ByteWriter w;
  w.bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("GMDL"), 4));
  w.u16(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(spec.name));
  w.u16(narrow16(spec.input_length, "input length"));
  if (spec.input_channels > 0xFF) throw ContractError("export: input channels exceed 255");
  w.u8(static_cast<std::uint8_t>(spec.input_channels));
  w.f32(static_cast<float>(tau_star));
  w.u16(narrow16(spec.layers.size(), "layer count"));

  std::size_t offset_bytes = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = source_shape(spec, shapes, l.input);
    const std::size_t expected = layer_blob_floats(l, in);
    std::size_t have = 0;
    for (const auto* t : blob_tensors(params.layers[i])) have += t->size();
    if (have != expected)
      throw ContractError("export: layer " + std::to_string(i) + " (" + l.name + ") has " + std::to_string(have) +
                          " values, expected " + std::to_string(expected));
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u16(layer_ref(l.input));
    w.u16(l.kind == LayerKind::residual_add ? layer_ref(l.skip_source) : kNoLayer);
    w.u16(narrow16(l.kernel_size, "kernel size"));
    w.u16(narrow16(l.filters, "filters"));
    w.u16(narrow16(l.pool_size, "pool size"));
    w.u16(l.bias ? 1 : 0);
    w.u16(static_cast<std::uint16_t>(std::lround(l.dropout_p * 1000.0)));
    w.u32(static_cast<std::uint32_t>(offset_bytes));
    offset_bytes += expected * sizeof(float);
  }
  w.u32(static_cast<std::uint32_t>(offset_bytes));
  for (const auto& lp : params.layers)
    for (const auto* t : blob_tensors(lp))
      for (double v : *t) w.f32(static_cast<float>(v));
  return w.take();
}

ModelBinaryContents decode_model(std::span<const std::uint8_t> bytes) {
  try {
    detail::ByteReader r(bytes);
    const auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), "GMDL"))
      throw LoadError(LoadErrorCode::bad_magic, "not a GMDL model binary (bad magic)");
    const std::uint16_t version = r.u16();
    if (version != kModelFormatVersion)
      throw LoadError(LoadErrorCode::version_mismatch, "model format version " + std::to_string(version) +
                                                           " is not supported (this build reads version " +
                                                           std::to_string(kModelFormatVersion) + ")");
    ModelBinaryContents out;
    const std::uint8_t code = r.u8();
    if (code > static_cast<std::uint8_t>(ModelName::model2))
      throw LoadError(LoadErrorCode::corrupt_header, "unknown model code " + std::to_string(code));
    out.spec.name = static_cast<ModelName>(code);
    out.spec.input_length = r.u16();
    out.spec.input_channels = r.u8();
    out.tau_star = r.f32();
    if (out.spec.input_length == 0 || out.spec.input_channels == 0)
      throw LoadError(LoadErrorCode::corrupt_header, "zero input dimension in header");
    if (!(out.tau_star >= 0.0f && out.tau_star <= 1.0f))
      throw LoadError(LoadErrorCode::corrupt_header, "tau* outside [0, 1]");
    const std::uint16_t count = r.u16();
    if (count == 0) throw LoadError(LoadErrorCode::corrupt_header, "model has no layers");

    const ModelSpec reference = build_spec(out.spec.name);
    std::vector<std::uint32_t> offsets;
    for (std::uint16_t i = 0; i < count; ++i) {
      LayerSpec l;
      const std::uint8_t kind = r.u8();
      if (kind > static_cast<std::uint8_t>(LayerKind::residual_add))
        throw LoadError(LoadErrorCode::unknown_layer_kind,
                        "layer " + std::to_string(i) + ": unknown layer kind " + std::to_string(kind));
      l.kind = static_cast<LayerKind>(kind);
      l.input = layer_ref(r.u16());
      l.skip_source = layer_ref(r.u16());
      l.kernel_size = r.u16();
      l.filters = r.u16();
      l.pool_size = r.u16();
      const std::uint16_t flags = r.u16();
      if (flags & ~1u) throw LoadError(LoadErrorCode::corrupt_header, "layer " + std::to_string(i) + ": unknown flags");
      l.bias = flags & 1u;
      l.dropout_p = r.u16() / 1000.0;
      offsets.push_back(r.u32());
      if (l.input != kModelInput && l.input >= static_cast<int>(i))
        throw LoadError(LoadErrorCode::invalid_geometry, "layer " + std::to_string(i) + " reads a later layer");
      if (l.kind == LayerKind::residual_add && l.skip_source != kModelInput && l.skip_source >= static_cast<int>(i))
        throw LoadError(LoadErrorCode::invalid_geometry, "layer " + std::to_string(i) + " skips from a later layer");
      l.name = std::string(to_string(l.kind)) + std::to_string(i);
      out.spec.layers.push_back(std::move(l));
    }
    // Keep the canonical layer names when the graph is the stock one.
    if (reference.layers.size() == out.spec.layers.size() && reference.input_length == out.spec.input_length &&
        reference.input_channels == out.spec.input_channels) {
      bool same = true;
      for (std::size_t i = 0; i < count && same; ++i) {
        const auto& a = reference.layers[i];
        const auto& b = out.spec.layers[i];
        same = a.kind == b.kind && a.input == b.input && a.kernel_size == b.kernel_size && a.filters == b.filters &&
               a.pool_size == b.pool_size && a.bias == b.bias &&
               (a.kind != LayerKind::residual_add || a.skip_source == b.skip_source) &&
               std::lround(a.dropout_p * 1000) == std::lround(b.dropout_p * 1000);
      }
      if (same)
        for (std::size_t i = 0; i < count; ++i) out.spec.layers[i].name = reference.layers[i].name;
    }

    std::vector<Shape> shapes;
    try {
      shapes = infer_shapes(out.spec);
    } catch (const ContractError& e) {
      throw LoadError(LoadErrorCode::invalid_geometry, std::string("invalid layer geometry: ") + e.what());
    }

    const std::uint32_t blob_bytes = r.u32();
    std::size_t expected_bytes = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (offsets[i] != expected_bytes)
        throw LoadError(LoadErrorCode::inconsistent_layout, "layer " + std::to_string(i) + ": weight offset " +
                                                                std::to_string(offsets[i]) + ", expected " +
                                                                std::to_string(expected_bytes));
      expected_bytes += layer_blob_floats(out.spec.layers[i], source_shape(out.spec, shapes, out.spec.layers[i].input)) *
                        sizeof(float);
    }
    if (blob_bytes != expected_bytes)
      throw LoadError(LoadErrorCode::inconsistent_layout, "weight blob declares " + std::to_string(blob_bytes) +
                                                              " bytes, layer table needs " +
                                                              std::to_string(expected_bytes));
    if (r.remaining() < blob_bytes)
      throw LoadError(LoadErrorCode::truncated, "weight blob truncated: " + std::to_string(r.remaining()) + " of " +
                                                    std::to_string(blob_bytes) + " bytes present");
    if (r.remaining() > blob_bytes)
      throw LoadError(LoadErrorCode::inconsistent_layout,
                      std::to_string(r.remaining() - blob_bytes) + " trailing bytes after the weight blob");

    out.params = init_params(out.spec, 0);
    for (auto& lp : out.params.layers) {
      std::vector<std::vector<double>*> tensors;
      if (auto* s = std::get_if<SepConvParams>(&lp)) {
        tensors = {&s->depthwise, &s->pointwise};
        if (s->has_bias()) tensors.push_back(&s->bias);
      } else if (auto* c = std::get_if<Conv1x1Params>(&lp)) {
        tensors = {&c->weights};
      } else if (auto* b = std::get_if<BatchNormParams>(&lp)) {
        tensors = {&b->gamma, &b->beta, &b->running_mean, &b->running_var};
      } else if (auto* d = std::get_if<DenseParams>(&lp)) {
        tensors = {&d->weights, &d->bias};
      }
      for (auto* t : tensors)
        for (auto& v : *t) {
          const float f = r.f32();
          if (!std::isfinite(f)) throw LoadError(LoadErrorCode::inconsistent_layout, "non-finite weight in blob");
          v = static_cast<double>(f);
        }
      if (auto* b = std::get_if<BatchNormParams>(&lp))
        for (double v : b->running_var)
          if (v < 0) throw LoadError(LoadErrorCode::inconsistent_layout, "negative batch-norm running variance");
    }
    return out;
  } catch (const detail::TruncatedInput& e) {
    throw LoadError(LoadErrorCode::truncated, std::string("model binary truncated: ") + e.what());
  }
}

ArenaPlan plan_arena(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  const int n = static_cast<int>(spec.layers.size());
  std::vector<int> last_read(spec.layers.size(), -1);
  int input_last_read = -1;
  auto note_read = [&](int src, int at) {
    if (src == kModelInput) input_last_read = std::max(input_last_read, at);
    else last_read[static_cast<std::size_t>(src)] = std::max(last_read[static_cast<std::size_t>(src)], at);
  };
  for (int i = 0; i < n; ++i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    note_read(l.input, i);
    if (l.kind == LayerKind::residual_add) note_read(l.skip_source, i);
  }
  last_read.back() = n;  // the probabilities are read after the last step

  ArenaPlan plan;
  auto add_region = [&](std::size_t floats, int first) {
    plan.regions.push_back({0, round_up(floats), first, first});
    return plan.regions.size() - 1;
  };
  const std::size_t input_region = add_region(spec.input_length * spec.input_channels, -1);
  plan.regions[input_region].last_step = input_last_read;

  std::vector<std::size_t> region_of(spec.layers.size());
  std::vector<std::size_t> scratch_of(spec.layers.size(), ArenaPlan::kNone);
  auto region_of_source = [&](int src) { return src == kModelInput ? input_region : region_of[static_cast<std::size_t>(src)]; };
  auto last_read_of = [&](int src) { return src == kModelInput ? input_last_read : last_read[static_cast<std::size_t>(src)]; };

  for (int i = 0; i < n; ++i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    const Shape& out = shapes[static_cast<std::size_t>(i)];
    const bool skip_aliases = l.kind == LayerKind::residual_add && region_of_source(l.skip_source) == region_of_source(l.input);
    if (elementwise(l.kind) && last_read_of(l.input) == i && !skip_aliases) {
      region_of[static_cast<std::size_t>(i)] = region_of_source(l.input);
    } else {
      region_of[static_cast<std::size_t>(i)] = add_region(out.length * out.channels, i);
    }
    auto& r = plan.regions[region_of[static_cast<std::size_t>(i)]];
    r.last_step = std::max(r.last_step, last_read[static_cast<std::size_t>(i)]);
    if (l.kind == LayerKind::sepconv) {
      const Shape in = source_shape(spec, shapes, l.input);
      scratch_of[static_cast<std::size_t>(i)] = add_region(in.length * in.channels, i);
    }
  }

  // First fit in creation order.
  std::size_t end = 0;
  for (std::size_t k = 0; k < plan.regions.size(); ++k) {
    auto& r = plan.regions[k];
    std::vector<std::pair<std::size_t, std::size_t>> busy;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& o = plan.regions[j];
      if (o.first_step <= r.last_step && r.first_step <= o.last_step) busy.emplace_back(o.offset, o.offset + o.size);
    }
    std::sort(busy.begin(), busy.end());
    std::size_t at = 0;
    for (const auto& [b, e] : busy) {
      if (at + r.size <= b) break;
      at = std::max(at, e);
    }
    r.offset = at;
    end = std::max(end, at + r.size);
  }
  plan.buffer_bytes = end * sizeof(float);
  for (int step = -1; step <= n; ++step) {
    std::size_t live = 0;
    for (const auto& r : plan.regions)
      if (r.first_step <= step && step <= r.last_step) live += r.size;
    plan.live_peak_bytes = std::max(plan.live_peak_bytes, live * sizeof(float));
  }

  plan.input_offset = plan.regions[input_region].offset;
  plan.layers.resize(spec.layers.size());
  for (int i = 0; i < n; ++i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    auto& s = plan.layers[static_cast<std::size_t>(i)];
    s.input = plan.regions[region_of_source(l.input)].offset;
    if (l.kind == LayerKind::residual_add) s.skip = plan.regions[region_of_source(l.skip_source)].offset;
    s.output = plan.regions[region_of[static_cast<std::size_t>(i)]].offset;
    if (scratch_of[static_cast<std::size_t>(i)] != ArenaPlan::kNone)
      s.scratch = plan.regions[scratch_of[static_cast<std::size_t>(i)]].offset;
  }
  return plan;
}

bool arena_plan_is_valid(const ArenaPlan& plan) {
  for (std::size_t a = 0; a < plan.regions.size(); ++a) {
    const auto& x = plan.regions[a];
    if ((x.offset + x.size) * sizeof(float) > plan.buffer_bytes) return false;
    for (std::size_t b = a + 1; b < plan.regions.size(); ++b) {
      const auto& y = plan.regions[b];
      const bool time = x.first_step <= y.last_step && y.first_step <= x.last_step;
      const bool space = x.offset < y.offset + y.size && y.offset < x.offset + x.size;
      if (time && space) return false;
    }
  }
  return true;
}

RuntimeModel RuntimeModel::load(std::span<const std::uint8_t> bytes, const LoadOptions& options) {
  ModelBinaryContents c = decode_model(bytes);
  RuntimeModel m;
  m.spec_ = std::move(c.spec);
  m.tau_ = c.tau_star;
  m.folded_ = options.fold_batchnorm;
  m.flash_bytes_ = bytes.size();
  m.macs_ = count_macs(m.spec_);
  m.plan_ = plan_arena(m.spec_);
  const auto shapes = infer_shapes(m.spec_);

  auto push = [&](const std::vector<double>& v) {
    const std::size_t at = m.weights_.size();
    for (double x : v) m.weights_.push_back(static_cast<float>(x));
    return at;
  };
  for (std::size_t i = 0; i < m.spec_.layers.size(); ++i) {
    const LayerSpec& l = m.spec_.layers[i];
    const Shape in = source_shape(m.spec_, shapes, l.input);
    Layer rt;
    rt.kind = l.kind;
    rt.in_len = in.length;
    rt.in_ch = in.channels;
    rt.out_len = shapes[i].length;
    rt.out_ch = shapes[i].channels;
    rt.kernel = l.kernel_size;
    rt.pad = same_pad_left(l.kernel_size);
    rt.pool = l.pool_size;
    const LayerParams& lp = c.params.layers[i];
    if (const auto* s = std::get_if<SepConvParams>(&lp)) {
      rt.w0 = push(s->depthwise);
      rt.w1 = push(s->pointwise);
      if (s->has_bias()) rt.w2 = push(s->bias);
    } else if (const auto* cv = std::get_if<Conv1x1Params>(&lp)) {
      rt.w0 = push(cv->weights);
    } else if (const auto* b = std::get_if<BatchNormParams>(&lp)) {
      if (m.folded_) {
        // Fold in double, then round once.
        std::vector<double> scale(b->channels), shift(b->channels);
        for (std::size_t ch = 0; ch < b->channels; ++ch) {
          scale[ch] = b->gamma[ch] / std::sqrt(b->running_var[ch] + b->epsilon);
          shift[ch] = b->beta[ch] - scale[ch] * b->running_mean[ch];
        }
        rt.w0 = push(scale);
        rt.w1 = push(shift);
      } else {
        rt.w0 = push(b->gamma);
        rt.w1 = push(b->beta);
        rt.w2 = push(b->running_mean);
        rt.w3 = push(b->running_var);
        rt.epsilon = static_cast<float>(b->epsilon);
      }
    } else if (const auto* d = std::get_if<DenseParams>(&lp)) {
      rt.w0 = push(d->weights);
      rt.w1 = push(d->bias);
    }
    m.layers_.push_back(rt);
  }
  return m;
}

Inference RuntimeModel::infer(Arena& arena, std::span<const float> window) const {
  // Messages are built only on failure; the success path must not allocate.
  if (window.size() != spec_.input_length * spec_.input_channels)
    throw ContractError("infer: window has " + std::to_string(window.size()) + " values, expected " +
                        std::to_string(spec_.input_length * spec_.input_channels));
  if (arena.size() * sizeof(float) < plan_.buffer_bytes) throw ContractError("infer: arena smaller than the model's plan");
  const auto& K = simd::active_kernels<float>();
  float* base = arena.data().data();
  const float* w = weights_.data();
  std::copy(window.begin(), window.end(), base + plan_.input_offset);

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& L = layers_[i];
    const ArenaPlan::Slot& s = plan_.layers[i];
    const float* x = base + s.input;
    float* y = base + s.output;
    const std::size_t n_in = L.in_len * L.in_ch;
    switch (L.kind) {
      case LayerKind::sepconv: {
        float* tmp = base + s.scratch;
        K.depthwise(L.in_len, L.in_ch, L.kernel, L.pad, x, w + L.w0, tmp);
        K.matmul(L.in_len, L.in_ch, L.out_ch, tmp, w + L.w1, L.w2 == ArenaPlan::kNone ? nullptr : w + L.w2, y);
        break;
      }
      case LayerKind::conv1x1: K.matmul(L.in_len, L.in_ch, L.out_ch, x, w + L.w0, nullptr, y); break;
      case LayerKind::batchnorm:
        if (folded_) {
          const float* sc = w + L.w0;
          const float* sh = w + L.w1;
          for (std::size_t t = 0; t < L.in_len; ++t)
            for (std::size_t c = 0; c < L.in_ch; ++c) y[t * L.in_ch + c] = x[t * L.in_ch + c] * sc[c] + sh[c];
        } else {
          const float* g = w + L.w0;
          const float* b = w + L.w1;
          const float* mu = w + L.w2;
          const float* var = w + L.w3;
          for (std::size_t t = 0; t < L.in_len; ++t)
            for (std::size_t c = 0; c < L.in_ch; ++c)
              y[t * L.in_ch + c] = (x[t * L.in_ch + c] - mu[c]) / std::sqrt(var[c] + L.epsilon) * g[c] + b[c];
        }
        break;
      case LayerKind::relu:
        for (std::size_t j = 0; j < n_in; ++j) y[j] = x[j] > 0.0f ? x[j] : 0.0f;
        break;
      case LayerKind::maxpool:
        for (std::size_t t = 0; t < L.out_len; ++t)
          for (std::size_t c = 0; c < L.in_ch; ++c) {
            float best = x[t * L.pool * L.in_ch + c];
            for (std::size_t j = 1; j < L.pool; ++j) best = std::max(best, x[(t * L.pool + j) * L.in_ch + c]);
            y[t * L.in_ch + c] = best;
          }
        break;
      case LayerKind::avgpool: {
        const float inv = 1.0f / static_cast<float>(L.pool);
        for (std::size_t t = 0; t < L.out_len; ++t)
          for (std::size_t c = 0; c < L.in_ch; ++c) {
            float acc = 0.0f;
            for (std::size_t j = 0; j < L.pool; ++j) acc += x[(t * L.pool + j) * L.in_ch + c];
            y[t * L.in_ch + c] = acc * inv;
          }
        break;
      }
      case LayerKind::global_avg_pool: {
        for (std::size_t c = 0; c < L.in_ch; ++c) y[c] = 0.0f;
        for (std::size_t t = 0; t < L.in_len; ++t)
          for (std::size_t c = 0; c < L.in_ch; ++c) y[c] += x[t * L.in_ch + c];
        const float inv = 1.0f / static_cast<float>(L.in_len);
        for (std::size_t c = 0; c < L.in_ch; ++c) y[c] *= inv;
        break;
      }
      case LayerKind::dropout:
        if (y != x) std::memcpy(y, x, n_in * sizeof(float));
        break;
      case LayerKind::residual_add: {
        const float* z = base + s.skip;
        for (std::size_t j = 0; j < n_in; ++j) y[j] = x[j] + z[j];
        break;
      }
      case LayerKind::dense_softmax: {
        K.matmul(1, L.in_ch, L.out_ch, x, w + L.w0, w + L.w1, y);
        float mx = y[0];
        for (std::size_t c = 1; c < L.out_ch; ++c) mx = std::max(mx, y[c]);
        float sum = 0.0f;
        for (std::size_t c = 0; c < L.out_ch; ++c) sum += (y[c] = std::exp(y[c] - mx));
        for (std::size_t c = 0; c < L.out_ch; ++c) y[c] /= sum;
        break;
      }
    }
  }
  const float* probs = base + plan_.layers.back().output;
  Inference r;
  r.p_non_gait = probs[0];
  r.p_gait = probs[1];
  r.decision = r.p_gait >= tau_ ? Label::gait : Label::non_gait;
  return r;
}

ProfileReport profile(const RuntimeModel& model, std::size_t n_reps) {
  if (n_reps < 100) throw std::invalid_argument("profile: n_reps must be >= 100");
  constexpr std::size_t kWarmup = 10;
  Arena arena = model.make_arena();
  std::vector<float> window(model.spec().input_length * model.spec().input_channels);
  Rng rng(0x9e3779b97f4a7c15ull);
  for (auto& v : window) v = static_cast<float>(rng.normal(0.0, 0.2));

  std::vector<double> us;
  us.reserve(n_reps);
  volatile float sink = 0.0f;
  for (std::size_t rep = 0; rep < n_reps + kWarmup; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    const Inference r = model.infer(arena, window);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + r.p_gait;
    if (rep >= kWarmup) us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  ProfileReport p;
  p.macs = model.macs();
  p.peak_arena_bytes = model.plan().buffer_bytes;
  p.flash_bytes = model.flash_bytes();
  p.mean_latency_us = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
  std::sort(us.begin(), us.end());
  p.median_latency_us = us[us.size() / 2];
  p.p95_latency_us = us[std::min(us.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(us.size()))) - 1)];
  return p;
}

}  // namespace gaitsep
