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

// Test-only oracles. Nothing in here calls into the code under test, so the
// checks built on them stay independent of the implementation path.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace mcl::testing {

using Matrix = Eigen::MatrixXd;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows,
                            Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// One-sided (Hestenes) Jacobi SVD; returns singular values sorted
// descending. Slow and simple by design of an oracle.
inline std::vector<double> jacobi_singular_values(Matrix a) {
  if (a.rows() < a.cols()) a.transposeInPlace();
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (std::abs(gamma) <= 1e-300) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const Eigen::VectorXd cp = a.col(p);
        a.col(p) = c * cp - s * a.col(q);
        a.col(q) = s * cp + c * a.col(q);
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) sv[static_cast<std::size_t>(j)] = a.col(j).norm();
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

inline double oracle_nuclear_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : jacobi_singular_values(m)) s += v;
  return s;
}

// Central finite differences of a scalar function of a matrix.
inline Matrix central_difference(const std::function<double(const Matrix&)>& f,
                                 const Matrix& x, double h) {
  Matrix g(x.rows(), x.cols());
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp.data()[i];
    xp.data()[i] = orig + h;
    const double fp = f(xp);
    xp.data()[i] = orig - h;
    const double fm = f(xp);
    xp.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Matrix& a, const Matrix& b,
                             double floor = 1e-12) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

}  // namespace mcl::testing
