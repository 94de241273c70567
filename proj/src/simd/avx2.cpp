// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma. Only reached through avx2_kernels(), which
// checks CPU support before handing out the table.
#include <immintrin.h>

#include <algorithm>

#include "gaitsep/simd.hpp"

namespace gaitsep::simd {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static T sum(V v) {
    const __m128 h = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
    const __m128 q = _mm_add_ps(h, _mm_movehl_ps(h, h));
    return _mm_cvtss_f32(_mm_add_ss(q, _mm_shuffle_ps(q, q, 1)));
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static T sum(V v) {
    const __m128d h = _mm_add_pd(_mm256_castpd256_pd128(v), _mm256_extractf128_pd(v, 1));
    return _mm_cvtsd_f64(_mm_add_sd(h, _mm_unpackhi_pd(h, h)));
  }
};

template <typename S>
void matmul(std::size_t m, std::size_t k, std::size_t n, const typename S::T* a, const typename S::T* b,
            const typename S::T* bias, typename S::T* out) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  for (std::size_t r = 0; r < m; ++r) {
    const T* arow = a + r * k;
    T* orow = out + r * n;
    std::size_t j = 0;
    for (; j + 4 * W <= n; j += 4 * W) {
      V c0 = bias ? S::load(bias + j) : S::zero();
      V c1 = bias ? S::load(bias + j + W) : S::zero();
      V c2 = bias ? S::load(bias + j + 2 * W) : S::zero();
      V c3 = bias ? S::load(bias + j + 3 * W) : S::zero();
      for (std::size_t i = 0; i < k; ++i) {
        const V s = S::set1(arow[i]);
        const T* brow = b + i * n + j;
        c0 = S::fma(s, S::load(brow), c0);
        c1 = S::fma(s, S::load(brow + W), c1);
        c2 = S::fma(s, S::load(brow + 2 * W), c2);
        c3 = S::fma(s, S::load(brow + 3 * W), c3);
      }
      S::store(orow + j, c0);
      S::store(orow + j + W, c1);
      S::store(orow + j + 2 * W, c2);
      S::store(orow + j + 3 * W, c3);
    }
    for (; j + W <= n; j += W) {
      V c0 = bias ? S::load(bias + j) : S::zero();
      for (std::size_t i = 0; i < k; ++i) c0 = S::fma(S::set1(arow[i]), S::load(b + i * n + j), c0);
      S::store(orow + j, c0);
    }
    for (; j < n; ++j) {
      T acc = bias ? bias[j] : T{0};
      for (std::size_t i = 0; i < k; ++i) acc += arow[i] * b[i * n + j];
      orow[j] = acc;
    }
  }
}

template <typename S>
void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const typename S::T* a, const typename S::T* b,
               typename S::T* out) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  const std::size_t kv = k / W * W;
  for (std::size_t r = 0; r < m; ++r) {
    const T* arow = a + r * k;
    T* orow = out + r * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const T* b0 = b + j * k;
      const T* b1 = b0 + k;
      const T* b2 = b1 + k;
      const T* b3 = b2 + k;
      V c0 = S::zero(), c1 = S::zero(), c2 = S::zero(), c3 = S::zero();
      for (std::size_t i = 0; i < kv; i += W) {
        const V x = S::load(arow + i);
        c0 = S::fma(x, S::load(b0 + i), c0);
        c1 = S::fma(x, S::load(b1 + i), c1);
        c2 = S::fma(x, S::load(b2 + i), c2);
        c3 = S::fma(x, S::load(b3 + i), c3);
      }
      T s0 = S::sum(c0), s1 = S::sum(c1), s2 = S::sum(c2), s3 = S::sum(c3);
      for (std::size_t i = kv; i < k; ++i) {
        s0 += arow[i] * b0[i];
        s1 += arow[i] * b1[i];
        s2 += arow[i] * b2[i];
        s3 += arow[i] * b3[i];
      }
      orow[j] = s0;
      orow[j + 1] = s1;
      orow[j + 2] = s2;
      orow[j + 3] = s3;
    }
    for (; j < n; ++j) {
      const T* bj = b + j * k;
      V c = S::zero();
      for (std::size_t i = 0; i < kv; i += W) c = S::fma(S::load(arow + i), S::load(bj + i), c);
      T acc = S::sum(c);
      for (std::size_t i = kv; i < k; ++i) acc += arow[i] * bj[i];
      orow[j] = acc;
    }
  }
}

template <typename S>
void matmul_tn_acc(std::size_t m, std::size_t k, std::size_t n, const typename S::T* a, const typename S::T* g,
                   typename S::T* out) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  // Row blocks keep the slice of g being reduced resident in L1.
  constexpr std::size_t kRowBlock = 64;
  for (std::size_t r0 = 0; r0 < m; r0 += kRowBlock) {
    const std::size_t r1 = std::min(m, r0 + kRowBlock);
    for (std::size_t i = 0; i < k; ++i) {
      T* orow = out + i * n;
      std::size_t j = 0;
      for (; j + 2 * W <= n; j += 2 * W) {
        V c0 = S::load(orow + j);
        V c1 = S::load(orow + j + W);
        for (std::size_t r = r0; r < r1; ++r) {
          const V s = S::set1(a[r * k + i]);
          const T* grow = g + r * n + j;
          c0 = S::fma(s, S::load(grow), c0);
          c1 = S::fma(s, S::load(grow + W), c1);
        }
        S::store(orow + j, c0);
        S::store(orow + j + W, c1);
      }
      for (; j + W <= n; j += W) {
        V c0 = S::load(orow + j);
        for (std::size_t r = r0; r < r1; ++r) c0 = S::fma(S::set1(a[r * k + i]), S::load(g + r * n + j), c0);
        S::store(orow + j, c0);
      }
      for (; j < n; ++j) {
        T acc = orow[j];
        for (std::size_t r = r0; r < r1; ++r) acc += a[r * k + i] * g[r * n + j];
        orow[j] = acc;
      }
    }
  }
}

inline bool in_range(std::ptrdiff_t s, std::size_t len) { return s >= 0 && s < static_cast<std::ptrdiff_t>(len); }

template <typename S>
void depthwise(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad, const typename S::T* in,
               const typename S::T* kern, typename S::T* out) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  for (std::size_t t = 0; t < len; ++t) {
    T* o = out + t * ch;
    std::size_t c = 0;
    for (; c + W <= ch; c += W) {
      V acc = S::zero();
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
        if (!in_range(s, len)) continue;
        acc = S::fma(S::load(kern + j * ch + c), S::load(in + static_cast<std::size_t>(s) * ch + c), acc);
      }
      S::store(o + c, acc);
    }
    for (; c < ch; ++c) {
      T acc{0};
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
        if (!in_range(s, len)) continue;
        acc += kern[j * ch + c] * in[static_cast<std::size_t>(s) * ch + c];
      }
      o[c] = acc;
    }
  }
}

template <typename S>
void depthwise_kernel_grad_acc(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad,
                               const typename S::T* in, const typename S::T* g, typename S::T* kgrad) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  for (std::size_t j = 0; j < ksize; ++j) {
    // t ranges over outputs whose tap j lands inside the input.
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(j));
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                                       static_cast<std::ptrdiff_t>(len + pad) - static_cast<std::ptrdiff_t>(j));
    T* kg = kgrad + j * ch;
    std::size_t c = 0;
    for (; c + W <= ch; c += W) {
      V acc = S::load(kg + c);
      for (std::ptrdiff_t t = lo; t < hi; ++t) {
        const std::size_t s = static_cast<std::size_t>(t) + j - pad;
        acc = S::fma(S::load(g + static_cast<std::size_t>(t) * ch + c), S::load(in + s * ch + c), acc);
      }
      S::store(kg + c, acc);
    }
    for (; c < ch; ++c) {
      T acc = kg[c];
      for (std::ptrdiff_t t = lo; t < hi; ++t) {
        const std::size_t s = static_cast<std::size_t>(t) + j - pad;
        acc += g[static_cast<std::size_t>(t) * ch + c] * in[s * ch + c];
      }
      kg[c] = acc;
    }
  }
}

template <typename S>
void depthwise_input_grad(std::size_t len, std::size_t ch, std::size_t ksize, std::size_t pad,
                          const typename S::T* g, const typename S::T* kern, typename S::T* in_grad) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  for (std::size_t s = 0; s < len; ++s) {
    T* o = in_grad + s * ch;
    std::size_t c = 0;
    for (; c + W <= ch; c += W) {
      V acc = S::zero();
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(s + pad) - static_cast<std::ptrdiff_t>(j);
        if (!in_range(t, len)) continue;
        acc = S::fma(S::load(g + static_cast<std::size_t>(t) * ch + c), S::load(kern + j * ch + c), acc);
      }
      S::store(o + c, acc);
    }
    for (; c < ch; ++c) {
      T acc{0};
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(s + pad) - static_cast<std::ptrdiff_t>(j);
        if (!in_range(t, len)) continue;
        acc += g[static_cast<std::size_t>(t) * ch + c] * kern[j * ch + c];
      }
      o[c] = acc;
    }
  }
}

template <typename S>
constexpr KernelTable<typename S::T> kAvx2{"avx2",
                                           matmul<S>,
                                           matmul_nt<S>,
                                           matmul_tn_acc<S>,
                                           depthwise<S>,
                                           depthwise_kernel_grad_acc<S>,
                                           depthwise_input_grad<S>};

}  // namespace

namespace detail {
const KernelTable<float>& avx2_table_f32() { return kAvx2<F32>; }
const KernelTable<double>& avx2_table_f64() { return kAvx2<F64>; }
}  // namespace detail

}  // namespace gaitsep::simd
