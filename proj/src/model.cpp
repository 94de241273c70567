// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gaitsep {

std::string_view to_string(ModelName name) {
  switch (name) {
    case ModelName::baseline: return "baseline";
    case ModelName::model1: return "model1";
    case ModelName::model2: return "model2";
  }
  return "unknown";
}

ModelName parse_model_name(std::string_view text) {
  if (text == "baseline") return ModelName::baseline;
  if (text == "model1") return ModelName::model1;
  if (text == "model2") return ModelName::model2;
  throw std::invalid_argument("unknown model name '" + std::string(text) + "'");
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::sepconv: return "sepconv";
    case LayerKind::conv1x1: return "conv1x1";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::dense_softmax: return "dense_softmax";
    case LayerKind::dropout: return "dropout";
    case LayerKind::residual_add: return "residual_add";
  }
  return "unknown";
}

namespace {

class SpecBuilder {
 public:
  explicit SpecBuilder(ModelName name) { spec_.name = name; }

  int sepconv(std::string name, std::size_t filters, std::size_t k, bool bias, int input) {
    LayerSpec l{LayerKind::sepconv, std::move(name), input};
    l.filters = filters;
    l.kernel_size = k;
    l.bias = bias;
    return push(std::move(l));
  }
  int sepconv(std::string name, std::size_t filters, std::size_t k, bool bias) {
    return sepconv(std::move(name), filters, k, bias, last());
  }
  int conv1x1(std::string name, std::size_t filters, int input) {
    LayerSpec l{LayerKind::conv1x1, std::move(name), input};
    l.filters = filters;
    return push(std::move(l));
  }
  int simple(LayerKind kind, std::string name) { return push(LayerSpec{kind, std::move(name), last()}); }
  int pool(LayerKind kind, std::string name, std::size_t size) {
    LayerSpec l{kind, std::move(name), last()};
    l.pool_size = size;
    return push(std::move(l));
  }
  int dropout(std::string name, double p) {
    LayerSpec l{LayerKind::dropout, std::move(name), last()};
    l.dropout_p = p;
    return push(std::move(l));
  }
  int add(std::string name, int main, int skip) {
    LayerSpec l{LayerKind::residual_add, std::move(name), main};
    l.skip_source = skip;
    return push(std::move(l));
  }
  int dense(std::string name, std::size_t classes) {
    LayerSpec l{LayerKind::dense_softmax, std::move(name), last()};
    l.filters = classes;
    return push(std::move(l));
  }

  ModelSpec finish() { return std::move(spec_); }

 private:
  int last() const { return static_cast<int>(spec_.layers.size()) - 1; }
  int push(LayerSpec l) {
    spec_.layers.push_back(std::move(l));
    return last();
  }
  ModelSpec spec_;
};

}  // namespace

ModelSpec build_spec(ModelName name) {
  SpecBuilder b(name);
  switch (name) {
    case ModelName::baseline:
      b.sepconv("sepconv1", 100, 10, true, kModelInput);
      b.simple(LayerKind::relu, "relu1");
      b.pool(LayerKind::maxpool, "maxpool1", 3);
      b.sepconv("sepconv2", 40, 10, true);
      b.simple(LayerKind::relu, "relu2");
      b.simple(LayerKind::global_avg_pool, "gap");
      b.dropout("dropout", 0.5);
      b.dense("dense", 2);
      break;
    case ModelName::model1:
      b.sepconv("sepconv1", 8, 5, false, kModelInput);
      b.simple(LayerKind::batchnorm, "bn1");
      b.simple(LayerKind::relu, "relu1");
      b.pool(LayerKind::maxpool, "maxpool1", 2);
      b.sepconv("sepconv2", 16, 7, false);
      b.simple(LayerKind::batchnorm, "bn2");
      b.simple(LayerKind::relu, "relu2");
      b.simple(LayerKind::global_avg_pool, "gap");
      b.dense("dense", 2);
      break;
    case ModelName::model2: {
      b.sepconv("block1.sepconv", 8, 9, false, kModelInput);
      b.simple(LayerKind::batchnorm, "block1.bn");
      b.simple(LayerKind::relu, "block1.relu");
      const int main1 = b.pool(LayerKind::avgpool, "block1.avgpool", 2);
      b.conv1x1("block1.skip.conv1x1", 8, kModelInput);
      b.simple(LayerKind::batchnorm, "block1.skip.bn");
      const int skip1 = b.pool(LayerKind::avgpool, "block1.skip.avgpool", 2);
      b.add("block1.add", main1, skip1);
      const int block1 = b.simple(LayerKind::relu, "block1.relu_out");
      b.sepconv("block2.sepconv", 16, 9, false, block1);
      b.simple(LayerKind::batchnorm, "block2.bn");
      const int main2 = b.simple(LayerKind::relu, "block2.relu");
      b.conv1x1("block2.skip.conv1x1", 16, block1);
      const int skip2 = b.simple(LayerKind::batchnorm, "block2.skip.bn");
      b.add("block2.add", main2, skip2);
      b.simple(LayerKind::relu, "block2.relu_out");
      b.simple(LayerKind::global_avg_pool, "gap");
      b.dense("dense", 2);
      break;
    }
    default:
      throw std::invalid_argument("unknown model name");
  }
  return b.finish();
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  require(spec.input_length > 0 && spec.input_channels > 0, "model input shape must be non-empty");
  require(!spec.layers.empty(), "model has no layers");
  std::vector<Shape> shapes;
  shapes.reserve(spec.layers.size());
  const Shape input_shape{spec.input_length, spec.input_channels, false};

  auto source = [&](int idx, std::size_t at, const char* role) -> Shape {
    if (idx == kModelInput) return input_shape;
    if (idx < 0 || static_cast<std::size_t>(idx) >= at)
      throw ContractError("layer " + std::to_string(at) + " " + role + " must reference an earlier layer");
    return shapes[static_cast<std::size_t>(idx)];
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = source(l.input, i, "input");
    const std::string where = "layer " + std::to_string(i) + " (" + l.name + ")";
    auto require_sequence = [&] {
      if (in.flat) throw ContractError(where + " needs a (length, channels) input");
    };
    Shape out = in;
    switch (l.kind) {
      case LayerKind::sepconv:
        require_sequence();
        if (l.kernel_size < 1 || l.filters < 1) throw ContractError(where + ": kernel_size and filters must be >= 1");
        out.channels = l.filters;
        break;
      case LayerKind::conv1x1:
        require_sequence();
        if (l.filters < 1) throw ContractError(where + ": filters must be >= 1");
        out.channels = l.filters;
        break;
      case LayerKind::batchnorm:
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        require_sequence();
        if (l.pool_size < 1) throw ContractError(where + ": pool size must be >= 1");
        out.length = in.length / l.pool_size;
        if (out.length == 0) throw ContractError(where + ": pooled length would be zero");
        break;
      case LayerKind::global_avg_pool:
        require_sequence();
        out = Shape{1, in.channels, true};
        break;
      case LayerKind::dropout:
        if (!(l.dropout_p >= 0.0 && l.dropout_p < 1.0)) throw ContractError(where + ": dropout p must be in [0, 1)");
        break;
      case LayerKind::dense_softmax:
        if (!in.flat) throw ContractError(where + ": dense head needs a pooled (flat) input");
        if (l.filters < 1) throw ContractError(where + ": dense width must be >= 1");
        out = Shape{1, l.filters, true};
        break;
      case LayerKind::residual_add: {
        const Shape skip = source(l.skip_source, i, "skip source");
        if (skip.channels != in.channels)
          throw ContractError(where + ": residual channel mismatch " + std::to_string(skip.channels) + " vs " +
                              std::to_string(in.channels) + " (skip path needs a projection)");
        if (skip.length != in.length || skip.flat != in.flat)
          throw ContractError(where + ": residual length mismatch " + std::to_string(skip.length) + " vs " +
                              std::to_string(in.length));
        break;
      }
      default:
        throw ContractError(where + ": unknown layer kind");
    }
    shapes.push_back(out);
  }
  const LayerSpec& head = spec.layers.back();
  if (head.kind != LayerKind::dense_softmax || head.filters != 2)
    throw ContractError("model must terminate in a 2-class dense softmax");
  return shapes;
}

namespace {

Shape input_shape_of(const ModelSpec& spec, const std::vector<Shape>& shapes, int idx) {
  if (idx == kModelInput) return Shape{spec.input_length, spec.input_channels, false};
  return shapes[static_cast<std::size_t>(idx)];
}

}  // namespace

std::vector<std::size_t> layer_param_counts(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::vector<std::size_t> counts(spec.layers.size(), 0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = input_shape_of(spec, shapes, l.input);
    switch (l.kind) {
      case LayerKind::sepconv:
        counts[i] = l.kernel_size * in.channels + in.channels * l.filters + (l.bias ? l.filters : 0);
        break;
      case LayerKind::conv1x1: counts[i] = in.channels * l.filters; break;
      case LayerKind::batchnorm: counts[i] = 2 * in.channels; break;
      case LayerKind::dense_softmax: counts[i] = in.channels * l.filters + l.filters; break;
      default: break;
    }
  }
  return counts;
}

std::size_t count_params(const ModelSpec& spec) {
  std::size_t total = 0;
  for (auto c : layer_param_counts(spec)) total += c;
  return total;
}

std::vector<std::uint64_t> layer_macs(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::vector<std::uint64_t> macs(spec.layers.size(), 0);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = input_shape_of(spec, shapes, l.input);
    switch (l.kind) {
      case LayerKind::sepconv:
        macs[i] = in.length * l.kernel_size * in.channels + in.length * in.channels * l.filters;
        break;
      case LayerKind::conv1x1: macs[i] = in.length * in.channels * l.filters; break;
      case LayerKind::batchnorm: macs[i] = in.length * in.channels; break;
      case LayerKind::dense_softmax: macs[i] = in.channels * l.filters; break;
      default: break;
    }
  }
  return macs;
}

std::uint64_t count_macs(const ModelSpec& spec) {
  std::uint64_t total = 0;
  for (auto m : layer_macs(spec)) total += m;
  return total;
}

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  const auto shapes = infer_shapes(spec);
  Rng rng(seed);
  ModelParams p;
  p.seed = seed;
  p.layers.resize(spec.layers.size());
  auto he_fill = [&](std::vector<double>& v, std::size_t fan_in) {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& x : v) x = rng.normal(0.0, sd);
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Shape in = input_shape_of(spec, shapes, l.input);
    switch (l.kind) {
      case LayerKind::sepconv: {
        SepConvParams sp(l.kernel_size, in.channels, l.filters, l.bias);
        he_fill(sp.depthwise, l.kernel_size);
        he_fill(sp.pointwise, in.channels);
        p.layers[i] = std::move(sp);
        break;
      }
      case LayerKind::conv1x1: {
        Conv1x1Params cp(in.channels, l.filters);
        he_fill(cp.weights, in.channels);
        p.layers[i] = std::move(cp);
        break;
      }
      case LayerKind::batchnorm: p.layers[i] = BatchNormParams(in.channels); break;
      case LayerKind::dense_softmax: {
        DenseParams dp(in.channels, l.filters);
        he_fill(dp.weights, in.channels);
        p.layers[i] = std::move(dp);
        break;
      }
      default: break;
    }
  }
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& layer : z.layers) {
    std::visit(
        [](auto& lp) {
          using P = std::decay_t<decltype(lp)>;
          auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
          if constexpr (std::is_same_v<P, SepConvParams>) {
            zero(lp.depthwise), zero(lp.pointwise), zero(lp.bias);
          } else if constexpr (std::is_same_v<P, Conv1x1Params>) {
            zero(lp.weights);
          } else if constexpr (std::is_same_v<P, BatchNormParams>) {
            zero(lp.gamma), zero(lp.beta), zero(lp.running_mean), zero(lp.running_var);
          } else if constexpr (std::is_same_v<P, DenseParams>) {
            zero(lp.weights), zero(lp.bias);
          }
        },
        layer);
  }
  return z;
}

std::vector<TensorView> trainable_tensors(ModelParams& params) {
  std::vector<TensorView> views;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    std::visit(
        [&](auto& lp) {
          using P = std::decay_t<decltype(lp)>;
          if constexpr (std::is_same_v<P, SepConvParams>) {
            views.push_back({lp.depthwise, TensorRole::conv_kernel, i});
            views.push_back({lp.pointwise, TensorRole::conv_kernel, i});
            if (lp.has_bias()) views.push_back({lp.bias, TensorRole::bias, i});
          } else if constexpr (std::is_same_v<P, Conv1x1Params>) {
            views.push_back({lp.weights, TensorRole::conv_kernel, i});
          } else if constexpr (std::is_same_v<P, BatchNormParams>) {
            views.push_back({lp.gamma, TensorRole::bn_gamma, i});
            views.push_back({lp.beta, TensorRole::bn_beta, i});
          } else if constexpr (std::is_same_v<P, DenseParams>) {
            views.push_back({lp.weights, TensorRole::dense_kernel, i});
            views.push_back({lp.bias, TensorRole::bias, i});
          }
        },
        params.layers[i]);
  }
  return views;
}

std::uint64_t fingerprint(const ModelParams& params) {
  // FNV-1a over the trainable values; running statistics are excluded so a
  // cache stays valid across commit_running_stats.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::vector<double>& v) {
    for (double x : v) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      for (int s = 0; s < 64; s += 8) {
        h ^= (bits >> s) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (const auto& layer : params.layers) {
    std::visit(
        [&](const auto& lp) {
          using P = std::decay_t<decltype(lp)>;
          if constexpr (std::is_same_v<P, SepConvParams>) {
            mix(lp.depthwise), mix(lp.pointwise), mix(lp.bias);
          } else if constexpr (std::is_same_v<P, Conv1x1Params>) {
            mix(lp.weights);
          } else if constexpr (std::is_same_v<P, BatchNormParams>) {
            mix(lp.gamma), mix(lp.beta);
          } else if constexpr (std::is_same_v<P, DenseParams>) {
            mix(lp.weights), mix(lp.bias);
          }
        },
        layer);
  }
  return h;
}

namespace {

template <typename P>
const P& layer_params(const ModelParams& params, std::size_t i) {
  const P* p = std::get_if<P>(&params.layers.at(i));
  if (p == nullptr) throw ContractError("parameters for layer " + std::to_string(i) + " have the wrong type");
  return *p;
}

Matrix flat_to_matrix(const Feature1D& f) {
  Matrix m(f.batch, f.channels);
  m.data = f.data;
  return m;
}

Feature1D matrix_to_flat(const Matrix& m) {
  Feature1D f(m.rows, 1, m.cols);
  f.data = m.data;
  return f;
}

void accumulate(Feature1D& into, const Feature1D& g) {
  if (into.data.empty()) {
    into = g;
    return;
  }
  require(into.same_shape(g), "gradient shape mismatch while accumulating");
  for (std::size_t i = 0; i < g.data.size(); ++i) into.data[i] += g.data[i];
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const ModelParams& params, const Feature1D& batch, Mode mode,
                      Rng* dropout_rng) {
  require_dim(batch.length, spec.input_length, "model input length");
  require_dim(batch.channels, spec.input_channels, "model input channels");
  require(batch.batch > 0, "empty batch");
  require_dim(params.layers.size(), spec.layers.size(), "parameter block count");
  infer_shapes(spec);

  const std::size_t n = spec.layers.size();
  ForwardResult r;
  ForwardCache& cache = r.cache;
  cache.outputs.resize(n);
  if (mode == Mode::train) {
    cache.batchnorm.resize(n);
    cache.running_mean.resize(n);
    cache.running_var.resize(n);
    cache.dropout_scale.resize(n);
  }

  auto in_of = [&](int idx) -> const Feature1D& {
    return idx == kModelInput ? batch : cache.outputs[static_cast<std::size_t>(idx)];
  };

  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = spec.layers[i];
    const Feature1D& x = in_of(l.input);
    Feature1D& y = cache.outputs[i];
    switch (l.kind) {
      case LayerKind::sepconv: y = sepconv1d_forward(x, layer_params<SepConvParams>(params, i)); break;
      case LayerKind::conv1x1: y = conv1x1_forward(x, layer_params<Conv1x1Params>(params, i)); break;
      case LayerKind::batchnorm: {
        auto bn = batchnorm_forward(x, layer_params<BatchNormParams>(params, i), mode);
        y = std::move(bn.output);
        if (mode == Mode::train) {
          cache.batchnorm[i] = std::move(bn.cache);
          cache.running_mean[i] = std::move(bn.running_mean);
          cache.running_var[i] = std::move(bn.running_var);
        }
        break;
      }
      case LayerKind::relu: y = relu_forward(x); break;
      case LayerKind::maxpool: y = maxpool1d_forward(x, l.pool_size); break;
      case LayerKind::avgpool: y = avgpool1d_forward(x, l.pool_size); break;
      case LayerKind::global_avg_pool: y = matrix_to_flat(global_avg_pool(x)); break;
      case LayerKind::dropout:
        y = x;
        if (mode == Mode::train && l.dropout_p > 0.0) {
          if (dropout_rng == nullptr) throw std::logic_error("train-mode dropout needs a random stream");
          auto& scale = cache.dropout_scale[i];
          scale.resize(x.data.size());
          const double keep = 1.0 / (1.0 - l.dropout_p);
          for (std::size_t k = 0; k < scale.size(); ++k) {
            scale[k] = dropout_rng->uniform() < l.dropout_p ? 0.0 : keep;
            y.data[k] *= scale[k];
          }
        }
        break;
      case LayerKind::residual_add: {
        const Feature1D& s = in_of(l.skip_source);
        require(s.same_shape(x), "residual operands differ in shape");
        y = x;
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += s.data[k];
        break;
      }
      case LayerKind::dense_softmax: {
        cache.logits = dense_forward(flat_to_matrix(x), layer_params<DenseParams>(params, i));
        r.probs = softmax(cache.logits);
        y = matrix_to_flat(r.probs);
        break;
      }
    }
  }
  if (mode == Mode::train) {
    cache.input = batch;
    cache.params_fingerprint = fingerprint(params);
    cache.valid = true;
  }
  return r;
}

Matrix predict(const ModelSpec& spec, const ModelParams& params, const Feature1D& batch) {
  return forward(spec, params, batch, Mode::infer).probs;
}

ModelParams backward(const ModelSpec& spec, const ModelParams& params, const ForwardCache& cache,
                     const Matrix& grad_logits) {
  const std::size_t n = spec.layers.size();
  if (!cache.valid || cache.outputs.size() != n || cache.batchnorm.size() != n)
    throw std::logic_error("backward requires the cache of a train-mode forward pass of this model");
  if (cache.params_fingerprint != fingerprint(params))
    throw std::logic_error("stale forward cache: parameters changed since the forward pass");
  require_dim(grad_logits.rows, cache.input.batch, "grad_logits rows");
  require_dim(grad_logits.cols, 2, "grad_logits cols");

  ModelParams grads = zeros_like(params);
  std::vector<Feature1D> gout(n);
  Feature1D ginput;  // gradient wrt the model input, discarded

  auto in_of = [&](int idx) -> const Feature1D& {
    return idx == kModelInput ? cache.input : cache.outputs[static_cast<std::size_t>(idx)];
  };
  auto send = [&](int idx, const Feature1D& g) {
    if (idx == kModelInput) {
      if (!g.data.empty()) accumulate(ginput, g);
    } else {
      accumulate(gout[static_cast<std::size_t>(idx)], g);
    }
  };

  for (std::size_t ri = n; ri-- > 0;) {
    const LayerSpec& l = spec.layers[ri];
    const Feature1D& x = in_of(l.input);
    if (l.kind == LayerKind::dense_softmax) {
      const auto& p = layer_params<DenseParams>(params, ri);
      auto g = dense_backward(flat_to_matrix(x), p, grad_logits);
      grads.layers[ri] = std::move(g.params);
      send(l.input, matrix_to_flat(g.input));
      continue;
    }
    if (gout[ri].data.empty()) continue;  // output never reached the loss
    const Feature1D& gy = gout[ri];
    switch (l.kind) {
      case LayerKind::sepconv: {
        auto g = sepconv1d_backward(x, layer_params<SepConvParams>(params, ri), gy, l.input != kModelInput);
        grads.layers[ri] = std::move(g.params);
        send(l.input, g.input);
        break;
      }
      case LayerKind::conv1x1: {
        auto g = conv1x1_backward(x, layer_params<Conv1x1Params>(params, ri), gy, l.input != kModelInput);
        grads.layers[ri] = std::move(g.params);
        send(l.input, g.input);
        break;
      }
      case LayerKind::batchnorm: {
        const auto& p = layer_params<BatchNormParams>(params, ri);
        auto g = batchnorm_backward(cache.batchnorm[ri], p, gy);
        auto& gp = std::get<BatchNormParams>(grads.layers[ri]);
        gp.gamma = std::move(g.gamma);
        gp.beta = std::move(g.beta);
        send(l.input, g.input);
        break;
      }
      case LayerKind::relu: send(l.input, relu_backward(x, gy)); break;
      case LayerKind::maxpool: send(l.input, maxpool1d_backward(x, l.pool_size, gy)); break;
      case LayerKind::avgpool: send(l.input, avgpool1d_backward(x, l.pool_size, gy)); break;
      case LayerKind::global_avg_pool: send(l.input, global_avg_pool_backward(x, flat_to_matrix(gy))); break;
      case LayerKind::dropout: {
        Feature1D g = gy;
        const auto& scale = cache.dropout_scale[ri];
        if (!scale.empty())
          for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] *= scale[k];
        send(l.input, g);
        break;
      }
      case LayerKind::residual_add:
        send(l.input, gy);
        send(l.skip_source, gy);
        break;
      case LayerKind::dense_softmax: break;
    }
  }
  return grads;
}

void commit_running_stats(ModelParams& params, const ForwardCache& cache) {
  if (!cache.valid) throw std::logic_error("commit_running_stats needs a train-mode cache");
  for (std::size_t i = 0; i < params.layers.size() && i < cache.running_mean.size(); ++i) {
    if (auto* bn = std::get_if<BatchNormParams>(&params.layers[i]); bn && !cache.running_mean[i].empty()) {
      bn->running_mean = cache.running_mean[i];
      bn->running_var = cache.running_var[i];
    }
  }
}

}  // namespace gaitsep
