// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace gaitsep::simd {

/// Inner loops shared by the training kernels (double) and the deployed
/// runtime (float). Every implementation obeys the same contracts; the
/// scalar table is the reference the vector tables are tested against.
///
/// All matrices are dense row-major. Depthwise buffers are (length, channels).
template <typename T>
struct KernelTable {
  const char* name;

  // out[m, n] = bias[n] + sum_k a[m, k] * b[k, n]; bias may be null.
  void (*matmul)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, const T* bias, T* out);

  // out[m, n] = sum_k a[m, k] * b[n, k]  (b stored row-major as (n, k))
  void (*matmul_nt)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out);

  // out[k, n] += sum_m a[m, k] * g[m, n]
  void (*matmul_tn_acc)(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* out);

  // out[t, c] = sum_j kern[j, c] * in[t + j - pad, c], zero outside [0, len).
  void (*depthwise)(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const T* in,
                    const T* kern, T* out);

  // kgrad[j, c] += sum_t g[t, c] * in[t + j - pad, c]
  void (*depthwise_kernel_grad_acc)(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad,
                                    const T* in, const T* g, T* kgrad);

  // in_grad[s, c] = sum_j g[s - j + pad, c] * kern[j, c]
  void (*depthwise_input_grad)(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const T* g,
                               const T* kern, T* in_grad);
};

template <typename T>
const KernelTable<T>& scalar_kernels();

/// AVX2+FMA table, or nullptr when not compiled in or not supported by this CPU.
template <typename T>
const KernelTable<T>* avx2_kernels();

/// The table selected for this process. Chosen once, on first use: the
/// widest supported variant unless GAITSEP_SIMD=scalar is set.
template <typename T>
const KernelTable<T>& active_kernels();

const char* active_isa();

}  // namespace gaitsep::simd
