// SPDX-License-Identifier: Apache-2.0
//
// The three detector architectures as declarative layer graphs, with
// parameter/MAC accounting and whole-model forward and backward passes.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gaitsep/layers.hpp"
#include "gaitsep/random.hpp"
#include "gaitsep/tensor.hpp"

namespace gaitsep {

enum class ModelName : std::uint8_t { baseline = 0, model1 = 1, model2 = 2 };

std::string_view to_string(ModelName name);
/// Throws std::invalid_argument for anything but baseline/model1/model2.
ModelName parse_model_name(std::string_view text);

enum class LayerKind : std::uint8_t {
  sepconv = 0,
  conv1x1 = 1,
  batchnorm = 2,
  relu = 3,
  maxpool = 4,
  avgpool = 5,
  global_avg_pool = 6,
  dense_softmax = 7,
  dropout = 8,
  residual_add = 9,
};

std::string_view to_string(LayerKind kind);

/// Index used in LayerSpec::input / skip_source for the model input.
inline constexpr int kModelInput = -1;

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  int input = kModelInput;        // producing layer, or kModelInput
  int skip_source = kModelInput;  // residual_add: second operand
  std::size_t kernel_size = 0;    // sepconv
  std::size_t filters = 0;        // sepconv / conv1x1 / dense_softmax output width
  std::size_t pool_size = 0;      // maxpool / avgpool
  bool bias = false;              // sepconv
  double dropout_p = 0.0;         // dropout
};

/// Output shape of a layer. After global pooling the feature is a flat
/// vector, represented as length 1.
struct Shape {
  std::size_t length = 0;
  std::size_t channels = 0;
  bool flat = false;
  bool operator==(const Shape&) const = default;
};

struct ModelSpec {
  ModelName name = ModelName::model1;
  std::size_t input_length = 60;
  std::size_t input_channels = 3;
  std::vector<LayerSpec> layers;
};

ModelSpec build_spec(ModelName name);

/// Validates the graph and returns each layer's output shape.
/// Throws ContractError on any geometry or wiring violation.
std::vector<Shape> infer_shapes(const ModelSpec& spec);

std::vector<std::size_t> layer_param_counts(const ModelSpec& spec);
std::size_t count_params(const ModelSpec& spec);

/// MAC convention: one per multiply in depthwise, pointwise, 1x1 and dense
/// layers; one per element for inference batch-norm (folded scale); zero for
/// pooling, ReLU, residual adds, dropout and softmax. Biases are free.
std::vector<std::uint64_t> layer_macs(const ModelSpec& spec);
std::uint64_t count_macs(const ModelSpec& spec);

using LayerParams = std::variant<std::monostate, SepConvParams, Conv1x1Params, BatchNormParams, DenseParams>;

struct ModelParams {
  std::vector<LayerParams> layers;
  std::uint64_t seed = 0;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases, gamma = 1,
/// beta = 0, running mean 0 and variance 1.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

/// Same layout as params with every value zero (gradient accumulator).
ModelParams zeros_like(const ModelParams& params);

enum class TensorRole { conv_kernel, dense_kernel, bias, bn_gamma, bn_beta };

/// Weight decay applies to convolution and dense kernels only.
constexpr bool decays(TensorRole role) {
  return role == TensorRole::conv_kernel || role == TensorRole::dense_kernel;
}

struct TensorView {
  std::span<double> values;
  TensorRole role;
  std::size_t layer;
};

/// Trainable tensors in a fixed order; running statistics are excluded.
std::vector<TensorView> trainable_tensors(ModelParams& params);

/// Everything backward needs from a training-mode forward pass.
struct ForwardCache {
  Feature1D input;
  std::vector<Feature1D> outputs;  // per layer; flat outputs stored with length 1
  std::vector<BatchNormCache> batchnorm;
  std::vector<std::vector<double>> running_mean;  // per layer, batch-norm layers only
  std::vector<std::vector<double>> running_var;
  std::vector<std::vector<double>> dropout_scale;  // per layer: 0 or 1/(1-p) per element
  Matrix logits;
  std::uint64_t params_fingerprint = 0;
  bool valid = false;
};

struct ForwardResult {
  Matrix probs;  // (batch, 2)
  ForwardCache cache;
};

/// Runs the graph on a (batch, 60, 3) feature. Train mode uses batch
/// statistics, applies inverted dropout drawn from dropout_rng and fills the
/// cache; infer mode uses running statistics and treats dropout as identity.
ForwardResult forward(const ModelSpec& spec, const ModelParams& params, const Feature1D& batch, Mode mode,
                      Rng* dropout_rng = nullptr);

/// Inference-mode class probabilities.
Matrix predict(const ModelSpec& spec, const ModelParams& params, const Feature1D& batch);

/// Gradients of the loss with respect to every trainable tensor, given
/// d(loss)/d(logits). Throws std::logic_error on a missing or stale cache.
ModelParams backward(const ModelSpec& spec, const ModelParams& params, const ForwardCache& cache,
                     const Matrix& grad_logits);

/// Writes the batch-norm running statistics produced by a train-mode forward.
void commit_running_stats(ModelParams& params, const ForwardCache& cache);

std::uint64_t fingerprint(const ModelParams& params);

}  // namespace gaitsep
