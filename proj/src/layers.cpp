// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gaitsep/simd.hpp"

namespace gaitsep {
namespace {

constexpr double kProbFloor = 1e-12;

const simd::KernelTable<double>& kt() { return simd::active_kernels<double>(); }

void check_sepconv(const Feature1D& input, const SepConvParams& p) {
  require_dim(input.channels, p.in_channels, "sepconv input channels");
  require_dim(p.depthwise.size(), p.kernel_size * p.in_channels, "sepconv depthwise kernel");
  require_dim(p.pointwise.size(), p.in_channels * p.out_channels, "sepconv pointwise kernel");
  if (p.has_bias()) require_dim(p.bias.size(), p.out_channels, "sepconv bias");
  require(p.kernel_size >= 1, "sepconv kernel_size must be >= 1");
  require(input.length > 0, "sepconv input length must be > 0");
}

Feature1D depthwise_all(const Feature1D& input, const SepConvParams& p) {
  Feature1D dw(input.batch, input.length, input.channels);
  const std::size_t pad = same_pad_left(p.kernel_size);
  for (std::size_t b = 0; b < input.batch; ++b) {
    kt().depthwise(input.length, input.channels, p.kernel_size, pad, input.sample(b).data(), p.depthwise.data(),
                   dw.sample(b).data());
  }
  return dw;
}

std::vector<double> transpose(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  std::vector<double> t(m.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = m[r * cols + c];
  return t;
}

// grad_in[r, c] = sum_o grad_out[r, o] * w[c, o] for w of shape (in, out).
void pointwise_input_grad(std::size_t rows, std::size_t out_ch, std::size_t in_ch, const double* grad_out,
                          const std::vector<double>& w, double* grad_in) {
  if (in_ch < 16) {
    kt().matmul_nt(rows, out_ch, in_ch, grad_out, w.data(), grad_in);
  } else {
    const std::vector<double> wt = transpose(w, in_ch, out_ch);
    kt().matmul(rows, out_ch, in_ch, grad_out, wt.data(), nullptr, grad_in);
  }
}

void check_pool(const Feature1D& input, std::size_t size) {
  if (size < 1) throw ContractError("pool size must be >= 1");
  require(input.length / size >= 1, "pooled length would be zero");
}

}  // namespace

Feature1D sepconv1d_forward(const Feature1D& input, const SepConvParams& params) {
  check_sepconv(input, params);
  const Feature1D dw = depthwise_all(input, params);
  Feature1D out(input.batch, input.length, params.out_channels);
  kt().matmul(input.batch * input.length, params.in_channels, params.out_channels, dw.data.data(),
              params.pointwise.data(), params.has_bias() ? params.bias.data() : nullptr, out.data.data());
  return out;
}

SepConvGrads sepconv1d_backward(const Feature1D& input, const SepConvParams& params, const Feature1D& grad_output,
                                bool input_grad) {
  check_sepconv(input, params);
  require_dim(grad_output.batch, input.batch, "sepconv grad_output batch");
  require_dim(grad_output.length, input.length, "sepconv grad_output length");
  require_dim(grad_output.channels, params.out_channels, "sepconv grad_output channels");

  const std::size_t rows = input.batch * input.length;
  const Feature1D dw = depthwise_all(input, params);

  SepConvGrads g{Feature1D(),
                 SepConvParams(params.kernel_size, params.in_channels, params.out_channels, params.has_bias())};

  kt().matmul_tn_acc(rows, params.in_channels, params.out_channels, dw.data.data(), grad_output.data.data(),
                     g.params.pointwise.data());
  if (params.has_bias()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < params.out_channels; ++o) g.params.bias[o] += grad_output.data[r * params.out_channels + o];
  }

  const std::size_t pad = same_pad_left(params.kernel_size);
  Feature1D grad_dw(input.batch, input.length, input.channels);
  pointwise_input_grad(rows, params.out_channels, params.in_channels, grad_output.data.data(),
                       params.pointwise, grad_dw.data.data());
  for (std::size_t b = 0; b < input.batch; ++b)
    kt().depthwise_kernel_grad_acc(input.length, input.channels, params.kernel_size, pad, input.sample(b).data(),
                                   grad_dw.sample(b).data(), g.params.depthwise.data());
  if (input_grad) {
    g.input = Feature1D(input.batch, input.length, input.channels);
    for (std::size_t b = 0; b < input.batch; ++b)
      kt().depthwise_input_grad(input.length, input.channels, params.kernel_size, pad, grad_dw.sample(b).data(),
                                params.depthwise.data(), g.input.sample(b).data());
  }
  return g;
}

Feature1D conv1x1_forward(const Feature1D& input, const Conv1x1Params& params) {
  require_dim(input.channels, params.in_channels, "conv1x1 input channels");
  require_dim(params.weights.size(), params.in_channels * params.out_channels, "conv1x1 weights");
  Feature1D out(input.batch, input.length, params.out_channels);
  kt().matmul(input.batch * input.length, params.in_channels, params.out_channels, input.data.data(),
              params.weights.data(), nullptr, out.data.data());
  return out;
}

Conv1x1Grads conv1x1_backward(const Feature1D& input, const Conv1x1Params& params, const Feature1D& grad_output,
                              bool input_grad) {
  require_dim(input.channels, params.in_channels, "conv1x1 input channels");
  require_dim(grad_output.channels, params.out_channels, "conv1x1 grad_output channels");
  require_dim(grad_output.batch * grad_output.length, input.batch * input.length, "conv1x1 grad_output rows");
  const std::size_t rows = input.batch * input.length;
  Conv1x1Grads g{Feature1D(), Conv1x1Params(params.in_channels, params.out_channels)};
  kt().matmul_tn_acc(rows, params.in_channels, params.out_channels, input.data.data(), grad_output.data.data(),
                     g.params.weights.data());
  if (input_grad) {
    g.input = Feature1D(input.batch, input.length, input.channels);
    pointwise_input_grad(rows, params.out_channels, params.in_channels, grad_output.data.data(), params.weights,
                         g.input.data.data());
  }
  return g;
}

BatchNormForward batchnorm_forward(const Feature1D& input, const BatchNormParams& params, Mode mode) {
  const std::size_t ch = params.channels;
  require_dim(input.channels, ch, "batchnorm channels");
  require_dim(params.gamma.size(), ch, "batchnorm gamma");
  require_dim(params.beta.size(), ch, "batchnorm beta");

  BatchNormForward r;
  r.output = Feature1D(input.batch, input.length, ch);
  const std::size_t rows = input.batch * input.length;

  if (mode == Mode::infer) {
    if (!params.running_initialized())
      throw std::logic_error("batchnorm inference requested with uninitialized running statistics");
    r.running_mean = params.running_mean;
    r.running_var = params.running_var;
    std::vector<double> scale(ch);
    for (std::size_t c = 0; c < ch; ++c) scale[c] = params.gamma[c] / std::sqrt(params.running_var[c] + params.epsilon);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = i * ch + c;
        r.output.data[k] = scale[c] * (input.data[k] - params.running_mean[c]) + params.beta[c];
      }
    return r;
  }

  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < ch; ++c) mean[c] += input.data[i * ch + c];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const double d = input.data[i * ch + c] - mean[c];
      var[c] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(rows);

  r.cache.inv_std.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) r.cache.inv_std[c] = 1.0 / std::sqrt(var[c] + params.epsilon);
  r.cache.normalized = Feature1D(input.batch, input.length, ch);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = i * ch + c;
      const double xh = (input.data[k] - mean[c]) * r.cache.inv_std[c];
      r.cache.normalized.data[k] = xh;
      r.output.data[k] = params.gamma[c] * xh + params.beta[c];
    }

  r.running_mean.resize(ch);
  r.running_var.resize(ch);
  const double m = params.momentum;
  for (std::size_t c = 0; c < ch; ++c) {
    const double old_mean = params.running_initialized() ? params.running_mean[c] : 0.0;
    const double old_var = params.running_initialized() ? params.running_var[c] : 1.0;
    r.running_mean[c] = m * old_mean + (1.0 - m) * mean[c];
    r.running_var[c] = m * old_var + (1.0 - m) * var[c];
  }
  return r;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const BatchNormParams& params,
                                  const Feature1D& grad_output) {
  const std::size_t ch = params.channels;
  require(cache.normalized.same_shape(grad_output), "batchnorm grad_output shape differs from cached forward");
  require_dim(cache.inv_std.size(), ch, "batchnorm cache channels");
  const std::size_t rows = grad_output.batch * grad_output.length;
  const double n = static_cast<double>(rows);

  BatchNormGrads g;
  g.gamma.assign(ch, 0.0);
  g.beta.assign(ch, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = i * ch + c;
      g.beta[c] += grad_output.data[k];
      g.gamma[c] += grad_output.data[k] * cache.normalized.data[k];
    }
  g.input = Feature1D(grad_output.batch, grad_output.length, ch);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = i * ch + c;
      g.input.data[k] = params.gamma[c] * cache.inv_std[c] / n *
                        (n * grad_output.data[k] - g.beta[c] - cache.normalized.data[k] * g.gamma[c]);
    }
  return g;
}

Feature1D relu_forward(const Feature1D& input) {
  Feature1D out(input.batch, input.length, input.channels);
  const double* x = input.data.data();
  double* y = out.data.data();
  for (std::size_t i = 0, n = out.data.size(); i < n; ++i) y[i] = std::max(x[i], 0.0);
  return out;
}

Feature1D relu_backward(const Feature1D& input, const Feature1D& grad_output) {
  require(input.same_shape(grad_output), "relu grad_output shape mismatch");
  Feature1D g(input.batch, input.length, input.channels);
  const double* x = input.data.data();
  const double* gy = grad_output.data.data();
  double* gx = g.data.data();
  for (std::size_t i = 0, n = g.data.size(); i < n; ++i) {
    const double v = gy[i];  // unconditional load lets the compiler emit a blend
    gx[i] = x[i] > 0.0 ? v : 0.0;
  }
  return g;
}

Feature1D maxpool1d_forward(const Feature1D& input, std::size_t size) {
  check_pool(input, size);
  const std::size_t out_len = input.length / size;
  const std::size_t ch = input.channels;
  Feature1D out(input.batch, out_len, ch);
  for (std::size_t b = 0; b < input.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t) {
      const double* x = input.data.data() + (b * input.length + t * size) * ch;
      double* y = &out.at(b, t, 0);
      std::copy(x, x + ch, y);
      for (std::size_t j = 1; j < size; ++j)
        for (std::size_t c = 0; c < ch; ++c) y[c] = std::max(y[c], x[j * ch + c]);
    }
  return out;
}

Feature1D maxpool1d_backward(const Feature1D& input, std::size_t size, const Feature1D& grad_output) {
  check_pool(input, size);
  const std::size_t out_len = input.length / size;
  const std::size_t ch = input.channels;
  require_dim(grad_output.batch, input.batch, "maxpool grad_output batch");
  require_dim(grad_output.length, out_len, "maxpool grad_output length");
  require_dim(grad_output.channels, ch, "maxpool grad_output channels");
  Feature1D g(input.batch, input.length, ch);
  for (std::size_t b = 0; b < input.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t) {
      const double* x = input.data.data() + (b * input.length + t * size) * ch;
      const double* gy = grad_output.data.data() + (b * out_len + t) * ch;
      double* gx = &g.at(b, t * size, 0);
      for (std::size_t c = 0; c < ch; ++c) {
        // First occurrence wins ties; selects instead of branches.
        double best = x[c];
        std::size_t arg = 0;
        for (std::size_t j = 1; j < size; ++j) {
          const double v = x[j * ch + c];
          const bool better = v > best;
          best = better ? v : best;
          arg = better ? j : arg;
        }
        gx[arg * ch + c] += gy[c];
      }
    }
  return g;
}

Feature1D avgpool1d_forward(const Feature1D& input, std::size_t size) {
  check_pool(input, size);
  const std::size_t out_len = input.length / size;
  const double inv = 1.0 / static_cast<double>(size);
  Feature1D out(input.batch, out_len, input.channels);
  for (std::size_t b = 0; b < input.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t c = 0; c < input.channels; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < size; ++j) acc += input.at(b, t * size + j, c);
        out.at(b, t, c) = acc * inv;
      }
  return out;
}

Feature1D avgpool1d_backward(const Feature1D& input, std::size_t size, const Feature1D& grad_output) {
  check_pool(input, size);
  const std::size_t out_len = input.length / size;
  require_dim(grad_output.length, out_len, "avgpool grad_output length");
  require_dim(grad_output.channels, input.channels, "avgpool grad_output channels");
  const double inv = 1.0 / static_cast<double>(size);
  Feature1D g(input.batch, input.length, input.channels);
  for (std::size_t b = 0; b < input.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t c = 0; c < input.channels; ++c)
        for (std::size_t j = 0; j < size; ++j) g.at(b, t * size + j, c) = grad_output.at(b, t, c) * inv;
  return g;
}

Matrix global_avg_pool(const Feature1D& input) {
  require(input.length > 0, "global_avg_pool on empty input");
  Matrix out(input.batch, input.channels);
  const double inv = 1.0 / static_cast<double>(input.length);
  for (std::size_t b = 0; b < input.batch; ++b) {
    for (std::size_t t = 0; t < input.length; ++t)
      for (std::size_t c = 0; c < input.channels; ++c) out(b, c) += input.at(b, t, c);
    for (std::size_t c = 0; c < input.channels; ++c) out(b, c) *= inv;
  }
  return out;
}

Feature1D global_avg_pool_backward(const Feature1D& input, const Matrix& grad_output) {
  require_dim(grad_output.rows, input.batch, "global_avg_pool grad rows");
  require_dim(grad_output.cols, input.channels, "global_avg_pool grad cols");
  Feature1D g(input.batch, input.length, input.channels);
  const double inv = 1.0 / static_cast<double>(input.length);
  for (std::size_t b = 0; b < input.batch; ++b)
    for (std::size_t t = 0; t < input.length; ++t)
      for (std::size_t c = 0; c < input.channels; ++c) g.at(b, t, c) = grad_output(b, c) * inv;
  return g;
}

Matrix dense_forward(const Matrix& input, const DenseParams& params) {
  require_dim(input.cols, params.in_dim, "dense input dim");
  require_dim(params.weights.size(), params.in_dim * params.out_dim, "dense weights");
  require_dim(params.bias.size(), params.out_dim, "dense bias");
  Matrix out(input.rows, params.out_dim);
  kt().matmul(input.rows, params.in_dim, params.out_dim, input.data.data(), params.weights.data(),
              params.bias.data(), out.data.data());
  return out;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double mx = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, logits(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p(r, c) = std::exp(logits(r, c) - mx);
      sum += p(r, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p(r, c) /= sum;
  }
  return p;
}

Matrix dense_softmax_forward(const Matrix& input, const DenseParams& params) {
  return softmax(dense_forward(input, params));
}

DenseGrads dense_backward(const Matrix& input, const DenseParams& params, const Matrix& grad_logits) {
  require_dim(input.cols, params.in_dim, "dense input dim");
  require_dim(grad_logits.rows, input.rows, "dense grad rows");
  require_dim(grad_logits.cols, params.out_dim, "dense grad cols");
  DenseGrads g{Matrix(input.rows, params.in_dim), DenseParams(params.in_dim, params.out_dim)};
  kt().matmul_tn_acc(input.rows, params.in_dim, params.out_dim, input.data.data(), grad_logits.data.data(),
                     g.params.weights.data());
  for (std::size_t r = 0; r < input.rows; ++r)
    for (std::size_t o = 0; o < params.out_dim; ++o) g.params.bias[o] += grad_logits(r, o);
  const std::vector<double> wt = transpose(params.weights, params.in_dim, params.out_dim);
  kt().matmul(input.rows, params.out_dim, params.in_dim, grad_logits.data.data(), wt.data(), nullptr,
              g.input.data.data());
  return g;
}

double weighted_crossentropy(std::span<const double> probs, std::span<const double> onehot, double weight) {
  require_dim(onehot.size(), probs.size(), "crossentropy label width");
  double acc = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (onehot[c] != 0.0) acc += onehot[c] * std::log(std::max(probs[c], kProbFloor));
  return -weight * acc;
}

double batch_crossentropy(const Matrix& probs, std::span<const int> labels, std::span<const double> sample_weights) {
  require_dim(labels.size(), probs.rows, "crossentropy labels");
  require_dim(sample_weights.size(), probs.rows, "crossentropy weights");
  double acc = 0.0;
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const double p = probs(r, static_cast<std::size_t>(labels[r]));
    acc += -sample_weights[r] * std::log(std::max(p, kProbFloor));
  }
  return acc / static_cast<double>(probs.rows);
}

Matrix crossentropy_grad_logits(const Matrix& probs, std::span<const int> labels,
                                std::span<const double> sample_weights) {
  require_dim(labels.size(), probs.rows, "crossentropy labels");
  require_dim(sample_weights.size(), probs.rows, "crossentropy weights");
  Matrix g(probs.rows, probs.cols);
  const double inv_n = 1.0 / static_cast<double>(probs.rows);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    if (probs(r, y) <= kProbFloor) continue;  // clamped region is flat
    const double s = sample_weights[r] * inv_n;
    for (std::size_t c = 0; c < probs.cols; ++c) g(r, c) = s * (probs(r, c) - (c == y ? 1.0 : 0.0));
  }
  return g;
}

}  // namespace gaitsep
