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

#pragma once

// Dense arithmetic kernels used by the network layers and the optimizer.
//
// Every kernel has a portable scalar reference implementation and an AVX2+FMA
// variant. The variant is picked once at startup from CPUID; MCL_KERNELS=scalar
// in the environment (or set_backend) forces the reference path. Both paths
// are compared against each other in tests/kernels_test.cpp.

#include <cstddef>
#include <string_view>

namespace mcl::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

// True when the CPU supports AVX2 and FMA and the AVX2 unit was compiled in.
bool avx2_available();

Backend active_backend();

// Throws std::invalid_argument when the requested backend is unavailable.
void set_backend(Backend b);

// Row-major C = A(m x k) * B(k x n), or C += A * B when accumulate is set.
template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
          int ldc, bool accumulate);

template <typename T>
T dot(const T* x, const T* y, std::size_t n);

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

template <typename T>
void relu_forward(const T* x, T* y, std::size_t n);

// dx = (x > 0) ? dy : 0
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n);

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  // 1 - beta^t for the current step t.
  double bias_correction1;
  double bias_correction2;
};

// In-place Adam update of n parameters with their first/second moments.
template <typename T>
void adam_update(T* w, const T* g, T* m, T* v, std::size_t n,
                 const AdamStep& step);

namespace detail {

// Per-type function table. One instance per backend.
template <typename T>
struct Table {
  void (*gemm)(int, int, int, const T*, int, const T*, int, T*, int, bool);
  T (*dot)(const T*, const T*, std::size_t);
  void (*axpy)(T, const T*, T*, std::size_t);
  void (*relu_forward)(const T*, T*, std::size_t);
  void (*relu_backward)(const T*, const T*, T*, std::size_t);
  void (*adam_update)(T*, const T*, T*, T*, std::size_t, const AdamStep&);
};

template <typename T>
const Table<T>& scalar_table();

// Only defined when the AVX2 unit is compiled in (MCL_HAVE_AVX2_UNIT).
template <typename T>
const Table<T>& avx2_table();

}  // namespace detail
}  // namespace mcl::kernels
