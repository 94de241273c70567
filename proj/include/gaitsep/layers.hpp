// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward primitives for every layer in the three detector
// architectures. Training runs in double precision; the deployed runtime
// reimplements the forward path in float (see runtime.hpp).
//
// Kernels are pure: they never mutate their inputs and batch-norm training
// returns the updated running statistics instead of writing them back.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gaitsep/tensor.hpp"

namespace gaitsep {

enum class Mode { train, infer };

/// Left zero-padding for "same" convolution; the right side gets the rest.
constexpr std::size_t same_pad_left(std::size_t kernel_size) { return (kernel_size - 1) / 2; }

struct SepConvParams {
  std::size_t kernel_size = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> depthwise;  // (kernel_size, in_channels)
  std::vector<double> pointwise;  // (in_channels, out_channels)
  std::vector<double> bias;       // (out_channels) or empty

  SepConvParams() = default;
  SepConvParams(std::size_t k, std::size_t in, std::size_t out, bool with_bias)
      : kernel_size(k), in_channels(in), out_channels(out), depthwise(k * in), pointwise(in * out),
        bias(with_bias ? out : 0) {}

  bool has_bias() const noexcept { return !bias.empty(); }
  std::size_t param_count() const noexcept { return depthwise.size() + pointwise.size() + bias.size(); }
};

struct Conv1x1Params {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;  // (in_channels, out_channels)

  Conv1x1Params() = default;
  Conv1x1Params(std::size_t in, std::size_t out) : in_channels(in), out_channels(out), weights(in * out) {}
  std::size_t param_count() const noexcept { return weights.size(); }
};

struct BatchNormParams {
  static constexpr double kEpsilon = 1e-3;
  static constexpr double kMomentum = 0.99;

  std::size_t channels = 0;
  std::vector<double> gamma;
  std::vector<double> beta;
  // Empty running statistics mean "never initialized"; inference refuses them.
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = kEpsilon;
  double momentum = kMomentum;

  BatchNormParams() = default;
  explicit BatchNormParams(std::size_t ch)
      : channels(ch), gamma(ch, 1.0), beta(ch, 0.0), running_mean(ch, 0.0), running_var(ch, 1.0) {}

  bool running_initialized() const noexcept {
    return running_mean.size() == channels && running_var.size() == channels;
  }
  std::size_t param_count() const noexcept { return gamma.size() + beta.size(); }
};

struct DenseParams {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights;  // (in_dim, out_dim)
  std::vector<double> bias;     // (out_dim)

  DenseParams() = default;
  DenseParams(std::size_t in, std::size_t out) : in_dim(in), out_dim(out), weights(in * out), bias(out) {}
  std::size_t param_count() const noexcept { return weights.size() + bias.size(); }
};

// --- separable convolution -------------------------------------------------

Feature1D sepconv1d_forward(const Feature1D& input, const SepConvParams& params);

struct SepConvGrads {
  Feature1D input;
  SepConvParams params;
};

/// With input_grad = false the input gradient is left empty (first layer).
SepConvGrads sepconv1d_backward(const Feature1D& input, const SepConvParams& params, const Feature1D& grad_output,
                                bool input_grad = true);

// --- 1x1 convolution (no bias) --------------------------------------------

Feature1D conv1x1_forward(const Feature1D& input, const Conv1x1Params& params);

struct Conv1x1Grads {
  Feature1D input;
  Conv1x1Params params;
};

Conv1x1Grads conv1x1_backward(const Feature1D& input, const Conv1x1Params& params, const Feature1D& grad_output,
                              bool input_grad = true);

// --- batch normalization ---------------------------------------------------

/// What backward needs from a training-mode forward pass.
struct BatchNormCache {
  Feature1D normalized;          // x_hat
  std::vector<double> inv_std;   // 1 / sqrt(var_batch + eps), per channel
};

struct BatchNormForward {
  Feature1D output;
  BatchNormCache cache;               // train mode only
  std::vector<double> running_mean;   // updated statistics (train) or unchanged copy (infer)
  std::vector<double> running_var;
};

/// Train mode normalizes with statistics pooled over batch x length per channel.
BatchNormForward batchnorm_forward(const Feature1D& input, const BatchNormParams& params, Mode mode);

struct BatchNormGrads {
  Feature1D input;
  std::vector<double> gamma;
  std::vector<double> beta;
};

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormParams& params,
                                  const Feature1D& grad_output);

// --- activations and pooling ----------------------------------------------

Feature1D relu_forward(const Feature1D& input);
Feature1D relu_backward(const Feature1D& input, const Feature1D& grad_output);

/// Non-overlapping pooling, stride == size, trailing remainder dropped.
Feature1D maxpool1d_forward(const Feature1D& input, std::size_t size);
/// Routes each gradient to the first maximal element of its window.
Feature1D maxpool1d_backward(const Feature1D& input, std::size_t size, const Feature1D& grad_output);

Feature1D avgpool1d_forward(const Feature1D& input, std::size_t size);
Feature1D avgpool1d_backward(const Feature1D& input, std::size_t size, const Feature1D& grad_output);

/// (batch, length, channels) -> (batch, channels)
Matrix global_avg_pool(const Feature1D& input);
Feature1D global_avg_pool_backward(const Feature1D& input, const Matrix& grad_output);

// --- classifier head -------------------------------------------------------

Matrix dense_forward(const Matrix& input, const DenseParams& params);

/// Row-wise softmax with max-logit subtraction.
Matrix softmax(const Matrix& logits);

Matrix dense_softmax_forward(const Matrix& input, const DenseParams& params);

struct DenseGrads {
  Matrix input;
  DenseParams params;
};

DenseGrads dense_backward(const Matrix& input, const DenseParams& params, const Matrix& grad_logits);

/// -weight * sum_c onehot[c] * ln(max(probs[c], 1e-12))
double weighted_crossentropy(std::span<const double> probs, std::span<const double> onehot, double weight);

/// Mean weighted cross-entropy of a batch; labels are class indices.
double batch_crossentropy(const Matrix& probs, std::span<const int> labels, std::span<const double> sample_weights);

/// Gradient of batch_crossentropy with respect to the pre-softmax logits.
Matrix crossentropy_grad_logits(const Matrix& probs, std::span<const int> labels,
                                std::span<const double> sample_weights);

}  // namespace gaitsep
