// Copyright 2026 The MCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime CPUID check in dispatch.cpp.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "mcl/kernels.hpp"

namespace mcl::kernels::detail {
namespace {

// Lane traits so the GEMM micro-kernel is written once for float and double.
template <typename T>
struct Lane;

template <>
struct Lane<float> {
  using Vec = __m256;
  static constexpr int kWidth = 8;
  static Vec zero() { return _mm256_setzero_ps(); }
  static Vec load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Vec v) { _mm256_storeu_ps(p, v); }
  static Vec set1(float x) { return _mm256_set1_ps(x); }
  static Vec fmadd(Vec a, Vec b, Vec c) { return _mm256_fmadd_ps(a, b, c); }
  static Vec add(Vec a, Vec b) { return _mm256_add_ps(a, b); }
  static Vec mul(Vec a, Vec b) { return _mm256_mul_ps(a, b); }
  static Vec sub(Vec a, Vec b) { return _mm256_sub_ps(a, b); }
  static Vec div(Vec a, Vec b) { return _mm256_div_ps(a, b); }
  static Vec sqrt(Vec a) { return _mm256_sqrt_ps(a); }
  static Vec max(Vec a, Vec b) { return _mm256_max_ps(a, b); }
  static Vec gt_mask(Vec a, Vec b) { return _mm256_cmp_ps(a, b, _CMP_GT_OQ); }
  static Vec band(Vec a, Vec b) { return _mm256_and_ps(a, b); }
  static float hsum(Vec v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Lane<double> {
  using Vec = __m256d;
  static constexpr int kWidth = 4;
  static Vec zero() { return _mm256_setzero_pd(); }
  static Vec load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Vec v) { _mm256_storeu_pd(p, v); }
  static Vec set1(double x) { return _mm256_set1_pd(x); }
  static Vec fmadd(Vec a, Vec b, Vec c) { return _mm256_fmadd_pd(a, b, c); }
  static Vec add(Vec a, Vec b) { return _mm256_add_pd(a, b); }
  static Vec mul(Vec a, Vec b) { return _mm256_mul_pd(a, b); }
  static Vec sub(Vec a, Vec b) { return _mm256_sub_pd(a, b); }
  static Vec div(Vec a, Vec b) { return _mm256_div_pd(a, b); }
  static Vec sqrt(Vec a) { return _mm256_sqrt_pd(a); }
  static Vec max(Vec a, Vec b) { return _mm256_max_pd(a, b); }
  static Vec gt_mask(Vec a, Vec b) { return _mm256_cmp_pd(a, b, _CMP_GT_OQ); }
  static Vec band(Vec a, Vec b) { return _mm256_and_pd(a, b); }
  static double hsum(Vec v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d hi64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
  }
};

// R rows of A times a 2-vector-wide panel of B. Accumulators stay in
// registers for the whole k loop.
template <typename T, int R>
inline void micro_kernel(int k, const T* a, int lda, const T* b, int ldb,
                         T* c, int ldc, bool accumulate) {
  using L = Lane<T>;
  constexpr int W = L::kWidth;
  typename L::Vec acc0[R];
  typename L::Vec acc1[R];
  for (int r = 0; r < R; ++r) {
    if (accumulate) {
      acc0[r] = L::load(c + r * ldc);
      acc1[r] = L::load(c + r * ldc + W);
    } else {
      acc0[r] = L::zero();
      acc1[r] = L::zero();
    }
  }
  for (int p = 0; p < k; ++p) {
    const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
    const auto b0 = L::load(brow);
    const auto b1 = L::load(brow + W);
    for (int r = 0; r < R; ++r) {
      const auto av = L::set1(a[r * lda + p]);
      acc0[r] = L::fmadd(av, b0, acc0[r]);
      acc1[r] = L::fmadd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    L::store(c + r * ldc, acc0[r]);
    L::store(c + r * ldc + W, acc1[r]);
  }
}

// Column tail narrower than one panel. The caller has copied the B columns
// into a zero-padded k x P panel; C goes through a small padded buffer.
template <typename T, int R>
inline void micro_kernel_tail(int k, int ncols, const T* a, int lda,
                              const T* padded_b, T* c, int ldc,
                              bool accumulate) {
  constexpr int P = 2 * Lane<T>::kWidth;
  alignas(32) T cbuf[R * P];
  for (int r = 0; r < R; ++r) {
    for (int j = 0; j < P; ++j) {
      cbuf[r * P + j] = (accumulate && j < ncols) ? c[r * ldc + j] : T(0);
    }
  }
  micro_kernel<T, R>(k, a, lda, padded_b, P, cbuf, P, true);
  for (int r = 0; r < R; ++r) {
    for (int j = 0; j < ncols; ++j) c[r * ldc + j] = cbuf[r * P + j];
  }
}

template <typename T>
void gemm_avx2(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
               T* c, int ldc, bool accumulate) {
  constexpr int P = 2 * Lane<T>::kWidth;
  constexpr int R = 4;
  if (k == 0) {
    if (!accumulate) {
      for (int i = 0; i < m; ++i) std::memset(c + i * ldc, 0, sizeof(T) * n);
    }
    return;
  }
  std::vector<T> padded;

  // Column panels outermost so one k x P slice of B stays hot in L1 while
  // every row block of A streams past it.
  for (int j = 0; j < n; j += P) {
    const int cols = (j + P <= n) ? P : n - j;
    if (cols < P) {
      padded.assign(static_cast<std::size_t>(k) * P, T(0));
      for (int p = 0; p < k; ++p) {
        const T* src = b + static_cast<std::ptrdiff_t>(p) * ldb + j;
        std::copy(src, src + cols,
                  padded.data() + static_cast<std::ptrdiff_t>(p) * P);
      }
    }
    int i = 0;
    for (; i + R <= m; i += R) {
      const T* ai = a + static_cast<std::ptrdiff_t>(i) * lda;
      T* ci = c + static_cast<std::ptrdiff_t>(i) * ldc + j;
      if (cols == P) {
        micro_kernel<T, R>(k, ai, lda, b + j, ldb, ci, ldc, accumulate);
      } else {
        micro_kernel_tail<T, R>(k, cols, ai, lda, padded.data(), ci, ldc,
                                accumulate);
      }
    }
    for (; i < m; ++i) {
      const T* ai = a + static_cast<std::ptrdiff_t>(i) * lda;
      T* ci = c + static_cast<std::ptrdiff_t>(i) * ldc + j;
      if (cols == P) {
        micro_kernel<T, 1>(k, ai, lda, b + j, ldb, ci, ldc, accumulate);
      } else {
        micro_kernel_tail<T, 1>(k, cols, ai, lda, padded.data(), ci, ldc,
                                accumulate);
      }
    }
  }
}

template <typename T>
T dot_avx2(const T* x, const T* y, std::size_t n) {
  using L = Lane<T>;
  constexpr std::size_t W = L::kWidth;
  auto s0 = L::zero();
  auto s1 = L::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    s0 = L::fmadd(L::load(x + i), L::load(y + i), s0);
    s1 = L::fmadd(L::load(x + i + W), L::load(y + i + W), s1);
  }
  for (; i + W <= n; i += W) s0 = L::fmadd(L::load(x + i), L::load(y + i), s0);
  T s = L::hsum(L::add(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_avx2(T alpha, const T* x, T* y, std::size_t n) {
  using L = Lane<T>;
  constexpr std::size_t W = L::kWidth;
  const auto av = L::set1(alpha);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    L::store(y + i, L::fmadd(av, L::load(x + i), L::load(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu_forward_avx2(const T* x, T* y, std::size_t n) {
  using L = Lane<T>;
  constexpr std::size_t W = L::kWidth;
  const auto z = L::zero();
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto v = L::load(x + i);
    // Mask form keeps NaN -> 0 behaviour identical to the reference.
    L::store(y + i, L::band(v, L::gt_mask(v, z)));
  }
  for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward_avx2(const T* x, const T* dy, T* dx, std::size_t n) {
  using L = Lane<T>;
  constexpr std::size_t W = L::kWidth;
  const auto z = L::zero();
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto mask = L::gt_mask(L::load(x + i), z);
    L::store(dx + i, L::band(L::load(dy + i), mask));
  }
  for (; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void adam_avx2(T* w, const T* g, T* m, T* v, std::size_t n,
               const AdamStep& s) {
  using L = Lane<T>;
  constexpr std::size_t W = L::kWidth;
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  const T one_b1 = static_cast<T>(1.0 - s.beta1);
  const T one_b2 = static_cast<T>(1.0 - s.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / s.bias_correction1);
  const T inv_bc2 = static_cast<T>(1.0 / s.bias_correction2);
  const T lr = static_cast<T>(s.lr);
  const T eps = static_cast<T>(s.eps);
  const auto vb1 = L::set1(b1), vb2 = L::set1(b2);
  const auto vob1 = L::set1(one_b1), vob2 = L::set1(one_b2);
  const auto vbc1 = L::set1(inv_bc1), vbc2 = L::set1(inv_bc2);
  const auto vlr = L::set1(lr), veps = L::set1(eps);
  std::size_t i = 0;
  for (; i + W <= n; i += W) {
    const auto gi = L::load(g + i);
    const auto mi = L::add(L::mul(vb1, L::load(m + i)), L::mul(vob1, gi));
    const auto vi =
        L::add(L::mul(vb2, L::load(v + i)), L::mul(vob2, L::mul(gi, gi)));
    L::store(m + i, mi);
    L::store(v + i, vi);
    const auto mhat = L::mul(mi, vbc1);
    const auto vhat = L::mul(vi, vbc2);
    const auto step = L::div(L::mul(vlr, mhat), L::add(L::sqrt(vhat), veps));
    L::store(w + i, L::sub(L::load(w + i), step));
  }
  for (; i < n; ++i) {
    m[i] = b1 * m[i] + one_b1 * g[i];
    v[i] = b2 * v[i] + one_b2 * (g[i] * g[i]);
    const T mhat = m[i] * inv_bc1;
    const T vhat = v[i] * inv_bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

template <typename T>
const Table<T>& avx2_table() {
  static const Table<T> table{&gemm_avx2<T>,         &dot_avx2<T>,
                              &axpy_avx2<T>,         &relu_forward_avx2<T>,
                              &relu_backward_avx2<T>, &adam_avx2<T>};
  return table;
}

template const Table<float>& avx2_table<float>();
template const Table<double>& avx2_table<double>();

}  // namespace mcl::kernels::detail
