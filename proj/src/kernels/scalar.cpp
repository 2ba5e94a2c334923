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

// Reference kernels. Straightforward loops; these define the semantics the
// SIMD variants are tested against.

#include <cmath>

#include "mcl/kernels.hpp"

namespace mcl::kernels::detail {
namespace {

template <typename T>
void gemm_ref(int m, int n, int k, const T* a, int lda, const T* b, int ldb,
              T* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T aip = a[static_cast<std::ptrdiff_t>(i) * lda + p];
      if (aip == T(0)) continue;
      const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
T dot_ref(const T* x, const T* y, std::size_t n) {
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu_forward_ref(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward_ref(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void adam_ref(T* w, const T* g, T* m, T* v, std::size_t n,
              const AdamStep& s) {
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  const T one_b1 = static_cast<T>(1.0 - s.beta1);
  const T one_b2 = static_cast<T>(1.0 - s.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / s.bias_correction1);
  const T inv_bc2 = static_cast<T>(1.0 / s.bias_correction2);
  const T lr = static_cast<T>(s.lr);
  const T eps = static_cast<T>(s.eps);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + one_b1 * g[i];
    v[i] = b2 * v[i] + one_b2 * (g[i] * g[i]);
    const T mhat = m[i] * inv_bc1;
    const T vhat = v[i] * inv_bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

template <typename T>
const Table<T>& scalar_table() {
  static const Table<T> table{&gemm_ref<T>,         &dot_ref<T>,
                              &axpy_ref<T>,         &relu_forward_ref<T>,
                              &relu_backward_ref<T>, &adam_ref<T>};
  return table;
}

template const Table<float>& scalar_table<float>();
template const Table<double>& scalar_table<double>();

}  // namespace mcl::kernels::detail
