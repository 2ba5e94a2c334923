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

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mcl/kernels.hpp"

namespace mcl::kernels {
namespace {

bool cpu_has_avx2_fma() {
#if defined(MCL_HAVE_AVX2_UNIT) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("MCL_KERNELS")) {
    if (std::string(env) == "scalar") return Backend::kScalar;
  }
  return cpu_has_avx2_fma() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

template <typename T>
const detail::Table<T>& table() {
#ifdef MCL_HAVE_AVX2_UNIT
  if (current().load(std::memory_order_relaxed) == Backend::kAvx2) {
    return detail::avx2_table<T>();
  }
#endif
  return detail::scalar_table<T>();
}

}  // namespace

std::string_view backend_name(Backend b) {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

bool avx2_available() {
  static const bool available = cpu_has_avx2_fma();
  return available;
}

Backend active_backend() { return current().load(); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_available()) {
    throw std::invalid_argument("avx2 kernels are not available on this CPU");
  }
  current().store(b);
}

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
          int ldc, bool accumulate) {
  table<T>().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  return table<T>().dot(x, y, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  table<T>().axpy(alpha, x, y, n);
}

template <typename T>
void relu_forward(const T* x, T* y, std::size_t n) {
  table<T>().relu_forward(x, y, n);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  table<T>().relu_backward(x, dy, dx, n);
}

template <typename T>
void adam_update(T* w, const T* g, T* m, T* v, std::size_t n,
                 const AdamStep& step) {
  table<T>().adam_update(w, g, m, v, n, step);
}

#define MCL_INSTANTIATE_KERNELS(T)                                          \
  template void gemm<T>(int, int, int, const T*, int, const T*, int, T*,    \
                        int, bool);                                         \
  template T dot<T>(const T*, const T*, std::size_t);                       \
  template void axpy<T>(T, const T*, T*, std::size_t);                      \
  template void relu_forward<T>(const T*, T*, std::size_t);                 \
  template void relu_backward<T>(const T*, const T*, T*, std::size_t);      \
  template void adam_update<T>(T*, const T*, T*, T*, std::size_t,          \
                               const AdamStep&);

MCL_INSTANTIATE_KERNELS(float)
MCL_INSTANTIATE_KERNELS(double)

#undef MCL_INSTANTIATE_KERNELS

}  // namespace mcl::kernels
