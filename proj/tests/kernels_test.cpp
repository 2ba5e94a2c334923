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

// Scalar reference vs. SIMD equivalence on randomly drawn shapes.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "mcl/kernels.hpp"

namespace k = mcl::kernels;

namespace {

template <typename T>
std::vector<T> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <typename T>
T tolerance();
template <>
float tolerance<float>() {
  return 2e-5f;
}
template <>
double tolerance<double>() {
  return 1e-12;
}

// Runs fn under both backends and returns (scalar result, simd result).
template <typename Fn>
auto both_backends(Fn fn) {
  const auto saved = k::active_backend();
  k::set_backend(k::Backend::kScalar);
  auto ref = fn();
  k::set_backend(k::Backend::kAvx2);
  auto simd = fn();
  k::set_backend(saved);
  return std::make_pair(ref, simd);
}

template <typename T>
void check_gemm_equivalence(std::mt19937_64& rng, int m, int n, int kk,
                            bool accumulate) {
  const auto a = random_vec<T>(rng, static_cast<std::size_t>(m) * kk);
  const auto b = random_vec<T>(rng, static_cast<std::size_t>(kk) * n);
  const auto c0 = random_vec<T>(rng, static_cast<std::size_t>(m) * n);
  auto [ref, simd] = both_backends([&] {
    auto c = c0;
    k::gemm<T>(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, accumulate);
    return c;
  });
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const T scale = std::max<T>(T(1), std::abs(ref[i]));
    REQUIRE(std::abs(ref[i] - simd[i]) <= tolerance<T>() * scale * kk);
  }
}

}  // namespace

TEST_CASE("backend selection") {
  CHECK((k::backend_name(k::Backend::kScalar) == "scalar"));
  k::set_backend(k::Backend::kScalar);
  CHECK(k::active_backend() == k::Backend::kScalar);
  if (!k::avx2_available()) {
    CHECK_THROWS(k::set_backend(k::Backend::kAvx2));
  }
}

TEST_CASE("gemm reference matches a naive triple loop") {
  const int m = 3, n = 5, kk = 4;
  std::mt19937_64 rng(7);
  const auto a = random_vec<double>(rng, m * kk);
  const auto b = random_vec<double>(rng, kk * n);
  std::vector<double> c(m * n, 0.0);
  k::set_backend(k::Backend::kScalar);
  k::gemm<double>(m, n, kk, a.data(), kk, b.data(), n, c.data(), n, false);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < kk; ++p) s += a[i * kk + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("simd kernels agree with the scalar reference") {
  if (!k::avx2_available()) {
    MESSAGE("AVX2 unavailable; equivalence test skipped");
    return;
  }
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dim(1, 70);

  SUBCASE("gemm, random shapes including ragged tails") {
    for (int trial = 0; trial < 60; ++trial) {
      const int m = dim(rng), n = dim(rng), kk = dim(rng);
      const bool acc = trial % 2 == 1;
      check_gemm_equivalence<float>(rng, m, n, kk, acc);
      check_gemm_equivalence<double>(rng, m, n, kk, acc);
    }
    // Backbone-sized shape.
    check_gemm_equivalence<float>(rng, 32, 3136, 144, false);
    // Zero inner dimension clears or keeps C.
    check_gemm_equivalence<float>(rng, 5, 9, 0, false);
    check_gemm_equivalence<float>(rng, 5, 9, 0, true);
  }

  SUBCASE("vector kernels") {
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t n = static_cast<std::size_t>(dim(rng)) * 3;
      const auto x = random_vec<float>(rng, n);
      const auto y0 = random_vec<float>(rng, n);

      auto [dref, dsimd] = both_backends(
          [&] { return k::dot<float>(x.data(), y0.data(), n); });
      CHECK(std::abs(dref - dsimd) <= 1e-5f * static_cast<float>(n));

      auto [aref, asimd] = both_backends([&] {
        auto y = y0;
        k::axpy<float>(0.37f, x.data(), y.data(), n);
        return y;
      });
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(aref[i] - asimd[i]) <= 1e-6f);
      }

      auto [rref, rsimd] = both_backends([&] {
        std::vector<float> y(n);
        k::relu_forward<float>(x.data(), y.data(), n);
        std::vector<float> dx(n);
        k::relu_backward<float>(x.data(), y0.data(), dx.data(), n);
        y.insert(y.end(), dx.begin(), dx.end());
        return y;
      });
      CHECK(rref == rsimd);  // pure selection, must be bit-identical
    }
  }

  SUBCASE("relu maps NaN to zero on both paths") {
    std::vector<double> x(11, std::numeric_limits<double>::quiet_NaN());
    auto [ref, simd] = both_backends([&] {
      std::vector<double> y(x.size(), 5.0);
      k::relu_forward<double>(x.data(), y.data(), x.size());
      return y;
    });
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(ref[i] == 0.0);
      CHECK(simd[i] == 0.0);
    }
  }

  SUBCASE("adam update") {
    const std::size_t n = 203;
    const auto w0 = random_vec<double>(rng, n);
    const auto g = random_vec<double>(rng, n);
    const k::AdamStep step{1e-3, 0.9, 0.999, 1e-8, 1.0 - 0.9, 1.0 - 0.999};
    auto [ref, simd] = both_backends([&] {
      auto w = w0;
      std::vector<double> m(n, 0.0), v(n, 0.0);
      for (int it = 0; it < 3; ++it) {
        k::adam_update<double>(w.data(), g.data(), m.data(), v.data(), n, step);
      }
      return w;
    });
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(ref[i] == doctest::Approx(simd[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  // With zero moments and bias correction, the first step is lr * g/|g|.
  std::vector<float> w{1.f, 1.f, 1.f}, g{0.5f, -2.f, 1e-3f}, m(3, 0.f), v(3, 0.f);
  const k::AdamStep step{0.01, 0.9, 0.999, 1e-8, 0.1, 0.001};
  k::adam_update<float>(w.data(), g.data(), m.data(), v.data(), 3, step);
  CHECK(w[0] == doctest::Approx(0.99f).epsilon(1e-5));
  CHECK(w[1] == doctest::Approx(1.01f).epsilon(1e-5));
  CHECK(w[2] == doctest::Approx(0.99f).epsilon(1e-4));
}
