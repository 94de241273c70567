// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaitsep {

/// Raised when a kernel or model receives operands whose shapes disagree.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A batch of one-dimensional feature maps, stored row-major as
/// (batch, length, channels). A single window is a batch of one.
template <typename T>
struct Feature {
  std::size_t batch = 1;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<T> data;

  Feature() = default;
  Feature(std::size_t batch_, std::size_t length_, std::size_t channels_, T fill = T{0})
      : batch(batch_), length(length_), channels(channels_), data(batch_ * length_ * channels_, fill) {}
  /// Single zero-filled sample.
  Feature(std::size_t length_, std::size_t channels_) : Feature(1, length_, channels_) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t sample_size() const noexcept { return length * channels; }

  T& at(std::size_t b, std::size_t t, std::size_t c) { return data[(b * length + t) * channels + c]; }
  T at(std::size_t b, std::size_t t, std::size_t c) const { return data[(b * length + t) * channels + c]; }
  T& operator()(std::size_t t, std::size_t c) { return data[t * channels + c]; }
  T operator()(std::size_t t, std::size_t c) const { return data[t * channels + c]; }

  std::span<T> sample(std::size_t b) { return {data.data() + b * sample_size(), sample_size()}; }
  std::span<const T> sample(std::size_t b) const { return {data.data() + b * sample_size(), sample_size()}; }

  bool same_shape(const Feature& o) const noexcept {
    return batch == o.batch && length == o.length && channels == o.channels;
  }
};

using Feature1D = Feature<double>;
using Feature1Df = Feature<float>;

/// Row-major matrix of reals; used for pointwise/dense weights and (batch, classes) outputs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

inline void require_dim(std::size_t got, std::size_t want, const char* dimension) {
  if (got != want) {
    throw ContractError(std::string("shape mismatch in ") + dimension + ": got " + std::to_string(got) +
                        ", expected " + std::to_string(want));
  }
}

}  // namespace gaitsep
