// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/simd.hpp"

namespace gaitsep::simd {
namespace {

template <typename T>
void matmul(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, const T* bias, T* out) {
  for (std::size_t r = 0; r < m; ++r) {
    T* row = out + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = bias ? bias[j] : T{0};
    const T* arow = a + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      const T s = arow[i];
      const T* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t i = 0; i < k; ++i) acc += a[r * k + i] * b[j * k + i];
      out[r * n + j] = acc;
    }
}

template <typename T>
void matmul_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* out) {
  for (std::size_t r = 0; r < m; ++r) {
    const T* arow = a + r * k;
    const T* grow = g + r * n;
    for (std::size_t i = 0; i < k; ++i) {
      const T s = arow[i];
      T* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * grow[j];
    }
  }
}

template <typename T>
void depthwise(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const T* in, const T* kern,
               T* out) {
  for (std::size_t t = 0; t < len; ++t) {
    T* o = out + t * ch;
    for (std::size_t c = 0; c < ch; ++c) o[c] = T{0};
    for (std::size_t j = 0; j < ksize; ++j) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* x = in + static_cast<std::size_t>(s) * ch;
      const T* w = kern + j * ch;
      for (std::size_t c = 0; c < ch; ++c) o[c] += w[c] * x[c];
    }
  }
}

template <typename T>
void depthwise_kernel_grad_acc(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const T* in,
                               const T* g, T* kgrad) {
  for (std::size_t j = 0; j < ksize; ++j) {
    T* kg = kgrad + j * ch;
    for (std::size_t t = 0; t < len; ++t) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* x = in + static_cast<std::size_t>(s) * ch;
      const T* gr = g + t * ch;
      for (std::size_t c = 0; c < ch; ++c) kg[c] += gr[c] * x[c];
    }
  }
}

template <typename T>
void depthwise_input_grad(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const T* g,
                          const T* kern, T* in_grad) {
  for (std::size_t s = 0; s < len; ++s) {
    T* o = in_grad + s * ch;
    for (std::size_t c = 0; c < ch; ++c) o[c] = T{0};
    for (std::size_t j = 0; j < ksize; ++j) {
      const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(s + pad) - static_cast<std::ptrdiff_t>(j);
      if (t < 0 || t >= static_cast<std::ptrdiff_t>(len)) continue;
      const T* gr = g + static_cast<std::size_t>(t) * ch;
      const T* w = kern + j * ch;
      for (std::size_t c = 0; c < ch; ++c) o[c] += gr[c] * w[c];
    }
  }
}

template <typename T>
constexpr KernelTable<T> kScalar{"scalar",          matmul<T>, matmul_nt<T>, matmul_tn_acc<T>, depthwise<T>,
                                 depthwise_kernel_grad_acc<T>, depthwise_input_grad<T>};

}  // namespace

template <>
const KernelTable<float>& scalar_kernels<float>() {
  return kScalar<float>;
}
template <>
const KernelTable<double>& scalar_kernels<double>() {
  return kScalar<double>;
}

}  // namespace gaitsep::simd
