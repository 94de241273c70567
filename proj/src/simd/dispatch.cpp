// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <cstring>

#include "gaitsep/simd.hpp"

namespace gaitsep::simd {

#ifdef GAITSEP_HAVE_AVX2
namespace detail {
const KernelTable<float>& avx2_table_f32();
const KernelTable<double>& avx2_table_f64();
}  // namespace detail
#endif

namespace {

bool cpu_has_avx2() {
#if defined(GAITSEP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool scalar_forced() {
  const char* env = std::getenv("GAITSEP_SIMD");
  return env != nullptr && std::strcmp(env, "scalar") == 0;
}

bool use_avx2() {
  static const bool selected = cpu_has_avx2() && !scalar_forced();
  return selected;
}

}  // namespace

template <>
const KernelTable<float>* avx2_kernels<float>() {
#ifdef GAITSEP_HAVE_AVX2
  if (cpu_has_avx2()) return &detail::avx2_table_f32();
#endif
  return nullptr;
}

template <>
const KernelTable<double>* avx2_kernels<double>() {
#ifdef GAITSEP_HAVE_AVX2
  if (cpu_has_avx2()) return &detail::avx2_table_f64();
#endif
  return nullptr;
}

template <>
const KernelTable<float>& active_kernels<float>() {
  static const KernelTable<float>& table = use_avx2() ? *avx2_kernels<float>() : scalar_kernels<float>();
  return table;
}

template <>
const KernelTable<double>& active_kernels<double>() {
  static const KernelTable<double>& table = use_avx2() ? *avx2_kernels<double>() : scalar_kernels<double>();
  return table;
}

const char* active_isa() { return active_kernels<float>().name; }

}  // namespace gaitsep::simd
