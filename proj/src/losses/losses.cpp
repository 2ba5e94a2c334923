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

#include "mcl/losses.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>

#include "mcl/error.hpp"

namespace mcl::losses {
namespace {

using Eigen::Index;

void require_same_shape(const LatentMatrix& a, const LatentMatrix& b,
                        const char* what) {
  require(a.batch_size() == b.batch_size() && a.dim() == b.dim(),
          ErrorKind::kInvalidInput,
          std::string(what) + ": batches must have the same shape (" +
              std::to_string(a.batch_size()) + "x" + std::to_string(a.dim()) +
              " vs " + std::to_string(b.batch_size()) + "x" +
              std::to_string(b.dim()) + ")");
}

void require_tau(double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::kInvalidParameter,
          "temperature must be positive, got " + std::to_string(tau));
}

// Rows scaled to unit length plus the original norms.
struct RowDirections {
  Matrix unit;
  Eigen::VectorXd norms;
};

RowDirections row_directions(const Matrix& m) {
  RowDirections out{m, m.rowwise().norm()};
  for (Index k = 0; k < m.rows(); ++k) {
    if (!(out.norms(k) > 0.0)) {
      fail(ErrorKind::kDegenerate,
           "cosine similarity: row " + std::to_string(k) + " has zero norm");
    }
    out.unit.row(k) /= out.norms(k);
  }
  return out;
}

// Given dL/dS for S = cos(A, B), the gradients with respect to A and B.
std::pair<Matrix, Matrix> cosine_backward(const RowDirections& a,
                                          const RowDirections& b,
                                          const Matrix& grad_s) {
  Matrix ga = grad_s * b.unit;
  Matrix gb = grad_s.transpose() * a.unit;
  for (Index k = 0; k < ga.rows(); ++k) {
    const double pa = ga.row(k).dot(a.unit.row(k));
    ga.row(k) = (ga.row(k) - pa * a.unit.row(k)) / a.norms(k);
    const double pb = gb.row(k).dot(b.unit.row(k));
    gb.row(k) = (gb.row(k) - pb * b.unit.row(k)) / b.norms(k);
  }
  return {std::move(ga), std::move(gb)};
}

// Column indices of M belonging to class c.
std::vector<Index> class_columns(const GradeLabels& labels, int c,
                                 Stacking stacking) {
  std::vector<Index> cols;
  const Index n = static_cast<Index>(labels.size());
  for (Index k = 0; k < n; ++k) {
    if (labels[static_cast<std::size_t>(k)] == c) cols.push_back(k);
  }
  if (stacking == Stacking::kHorizontal) {
    const std::size_t half = cols.size();
    for (std::size_t j = 0; j < half; ++j) cols.push_back(cols[j] + n);
  }
  return cols;
}

Matrix gather_columns(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(static_cast<Index>(j)) = m.col(cols[j]);
  }
  return out;
}

void validate_lowrank_inputs(const LatentMatrix& xa, const LatentMatrix& xb,
                             const GradeLabels& labels,
                             const LowRankOptions& opts) {
  require_same_shape(xa, xb, "lowrank_loss");
  require(static_cast<Index>(labels.size()) == xa.batch_size(),
          ErrorKind::kInvalidInput,
          "lowrank_loss: label count " + std::to_string(labels.size()) +
              " does not match batch size " +
              std::to_string(xa.batch_size()));
  require(std::isfinite(opts.delta), ErrorKind::kInvalidParameter,
          "lowrank_loss: delta must be finite");
  require(opts.sv_threshold_rel > 0.0, ErrorKind::kInvalidParameter,
          "lowrank_loss: singular value threshold must be positive");
}

// U_k V_k^T over singular values strictly above threshold.
Matrix thresholded_polar(const Matrix& m, double threshold) {
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  if (m.cols() == 0 || m.rows() == 0) return out;
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > threshold) {
      out.noalias() += svd.matrixU().col(i) * svd.matrixV().col(i).transpose();
    }
  }
  return out;
}

Matrix normalize_backward_rows(const Matrix& y, const Eigen::VectorXd& scale,
                               const Matrix& dy) {
  // dx = (dy - mean(dy) - y * mean(dy . y)) / s, row by row.
  Matrix dx(dy.rows(), dy.cols());
  const double d = static_cast<double>(dy.cols());
  for (Index k = 0; k < dy.rows(); ++k) {
    const double mean_dy = dy.row(k).sum() / d;
    const double mean_dyy = dy.row(k).dot(y.row(k)) / d;
    dx.row(k) = (dy.row(k).array() - mean_dy - y.row(k).array() * mean_dyy) /
                scale(k);
  }
  return dx;
}

}  // namespace

LatentMatrix::LatentMatrix(Matrix values) : values_(std::move(values)) {
  require(values_.rows() >= 1 && values_.cols() >= 1, ErrorKind::kInvalidInput,
          "latent matrix must have at least one row and one column");
  require(values_.allFinite(), ErrorKind::kInvalidInput,
          "latent matrix contains non-finite entries");
}

GradeLabels::GradeLabels(std::vector<int> labels, int num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
  require(num_classes_ >= 1, ErrorKind::kInvalidInput,
          "number of classes must be positive");
  for (int y : labels_) {
    require(y >= 0 && y < num_classes_, ErrorKind::kInvalidInput,
            "label " + std::to_string(y) + " outside [0, " +
                std::to_string(num_classes_) + ")");
  }
}

LatentMatrix layer_normalize(const LatentMatrix& g, double eps,
                             NormStatistics stats) {
  require(eps > 0.0, ErrorKind::kInvalidParameter,
          "layer_normalize: eps must be positive");
  const Matrix& x = g.values();
  if (stats == NormStatistics::kPerBatch) {
    const Matrix xt = x.transpose();
    return LatentMatrix(
        layer_normalize(LatentMatrix(xt), eps, NormStatistics::kPerSample)
            .values()
            .transpose());
  }
  Matrix y(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Index k = 0; k < x.rows(); ++k) {
    const double mean = x.row(k).sum() / d;
    const double var = (x.row(k).array() - mean).square().sum() / d;
    y.row(k) = (x.row(k).array() - mean) / std::sqrt(var + eps);
  }
  return LatentMatrix(std::move(y));
}

Matrix layer_normalize_backward(const LatentMatrix& g, const Matrix& grad_out,
                                double eps, NormStatistics stats) {
  require(grad_out.rows() == g.batch_size() && grad_out.cols() == g.dim(),
          ErrorKind::kInvalidInput,
          "layer_normalize_backward: gradient shape mismatch");
  if (stats == NormStatistics::kPerBatch) {
    const LatentMatrix gt(g.values().transpose());
    return layer_normalize_backward(gt, grad_out.transpose(), eps,
                                    NormStatistics::kPerSample)
        .transpose();
  }
  const Matrix& x = g.values();
  const double d = static_cast<double>(x.cols());
  Matrix y(x.rows(), x.cols());
  Eigen::VectorXd scale(x.rows());
  for (Index k = 0; k < x.rows(); ++k) {
    const double mean = x.row(k).sum() / d;
    const double var = (x.row(k).array() - mean).square().sum() / d;
    scale(k) = std::sqrt(var + eps);
    y.row(k) = (x.row(k).array() - mean) / scale(k);
  }
  return normalize_backward_rows(y, scale, grad_out);
}

Matrix cosine_similarity_matrix(const LatentMatrix& a, const LatentMatrix& b) {
  require(a.dim() == b.dim(), ErrorKind::kInvalidInput,
          "cosine_similarity_matrix: feature dimensions differ");
  const RowDirections ua = row_directions(a.values());
  const RowDirections ub = row_directions(b.values());
  Matrix s = ua.unit * ub.unit.transpose();
  // Rounding can push |s| a hair past 1.
  return s.cwiseMax(-1.0).cwiseMin(1.0);
}

double nmc_loss(const LatentMatrix& ga, const LatentMatrix& gb,
                const NmcOptions& opts) {
  return nmc_loss_grad(ga, gb, opts).value;
}

PairGradient nmc_loss_grad(const LatentMatrix& ga, const LatentMatrix& gb,
                           const NmcOptions& opts) {
  require_same_shape(ga, gb, "nmc_loss");
  require(ga.batch_size() >= 2, ErrorKind::kBatchTooSmall,
          "nmc_loss needs at least 2 pairs so every anchor has a negative");
  require_tau(opts.tau);

  const LatentMatrix na = layer_normalize(ga, opts.eps, opts.stats);
  const LatentMatrix nb = layer_normalize(gb, opts.eps, opts.stats);
  const RowDirections ua = row_directions(na.values());
  const RowDirections ub = row_directions(nb.values());
  const Matrix s = ua.unit * ub.unit.transpose();
  const Index n = s.rows();
  const double tau = opts.tau;

  const Matrix e = (s.array() / tau).exp().matrix();
  // Denominators exclude the positive pair on the diagonal.
  const Eigen::VectorXd den_a = e.rowwise().sum() - e.diagonal();
  const Eigen::VectorXd den_b =
      e.colwise().sum().transpose() - e.diagonal();

  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double total = 0.0;
  for (Index k = 0; k < n; ++k) {
    total += (std::log(den_a(k)) - s(k, k) / tau) +
             (std::log(den_b(k)) - s(k, k) / tau);
  }

  Matrix grad_s(n, n);
  for (Index k = 0; k < n; ++k) {
    for (Index i = 0; i < n; ++i) {
      if (i == k) {
        grad_s(k, i) = -2.0 * scale / tau;
      } else {
        grad_s(k, i) =
            scale / tau * (e(k, i) / den_a(k) + e(k, i) / den_b(i));
      }
    }
  }

  auto [gna, gnb] = cosine_backward(ua, ub, grad_s);
  PairGradient out;
  out.value = total * scale;
  out.grad_a = layer_normalize_backward(ga, gna, opts.eps, opts.stats);
  out.grad_b = layer_normalize_backward(gb, gnb, opts.eps, opts.stats);
  return out;
}

double nuclear_norm(const Matrix& m) {
  require(m.allFinite(), ErrorKind::kInvalidInput,
          "nuclear_norm: matrix contains non-finite entries");
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues().sum();
}

Matrix stack_modalities(const LatentMatrix& xa, const LatentMatrix& xb,
                        Stacking stacking) {
  require_same_shape(xa, xb, "stack_modalities");
  const Index n = xa.batch_size();
  const Index d = xa.dim();
  if (stacking == Stacking::kVertical) {
    Matrix m(2 * d, n);
    m.topRows(d) = xa.values().transpose();
    m.bottomRows(d) = xb.values().transpose();
    return m;
  }
  Matrix m(d, 2 * n);
  m.leftCols(n) = xa.values().transpose();
  m.rightCols(n) = xb.values().transpose();
  return m;
}

LowRankValue lowrank_loss(const LatentMatrix& xa, const LatentMatrix& xb,
                          const GradeLabels& labels,
                          const LowRankOptions& opts) {
  validate_lowrank_inputs(xa, xb, labels, opts);
  const Matrix m = stack_modalities(xa, xb, opts.stacking);
  LowRankValue out;
  double sum = 0.0;
  for (int c = 0; c < labels.num_classes(); ++c) {
    const auto cols = class_columns(labels, c, opts.stacking);
    if (cols.empty()) ++out.empty_classes;
    sum += std::max(opts.delta, nuclear_norm(gather_columns(m, cols)));
  }
  out.value = sum - nuclear_norm(m);
  return out;
}

LowRankGradient lowrank_subgradient(const LatentMatrix& xa,
                                    const LatentMatrix& xb,
                                    const GradeLabels& labels,
                                    const LowRankOptions& opts) {
  validate_lowrank_inputs(xa, xb, labels, opts);
  const Matrix m = stack_modalities(xa, xb, opts.stacking);

  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double threshold = opts.sv_threshold_rel * (sv.size() ? sv(0) : 0.0);

  Matrix g = Matrix::Zero(m.rows(), m.cols());
  double sum = 0.0;
  LowRankGradient out;
  for (int c = 0; c < labels.num_classes(); ++c) {
    const auto cols = class_columns(labels, c, opts.stacking);
    if (cols.empty()) {
      ++out.empty_classes;
      sum += std::max(opts.delta, 0.0);
      continue;
    }
    const Matrix mc = gather_columns(m, cols);
    const double nuc = nuclear_norm(mc);
    sum += std::max(opts.delta, nuc);
    if (nuc <= opts.delta) continue;  // max() is locally constant
    const Matrix polar = thresholded_polar(mc, threshold);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      g.col(cols[j]) += polar.col(static_cast<Index>(j));
    }
  }
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > threshold) {
      g.noalias() -= svd.matrixU().col(i) * svd.matrixV().col(i).transpose();
    }
  }
  out.value = sum - sv.sum();

  const Index n = xa.batch_size();
  const Index d = xa.dim();
  if (opts.stacking == Stacking::kVertical) {
    out.grad_a = g.topRows(d).transpose();
    out.grad_b = g.bottomRows(d).transpose();
  } else {
    out.grad_a = g.leftCols(n).transpose();
    out.grad_b = g.rightCols(n).transpose();
  }
  return out;
}

double taylor_ce(std::span<const double> probs, int label, int t) {
  require(t >= 1, ErrorKind::kInvalidParameter,
          "taylor_ce: number of terms must be >= 1");
  require(label >= 0 && static_cast<std::size_t>(label) < probs.size(),
          ErrorKind::kInvalidInput, "taylor_ce: label out of range");
  for (double p : probs) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::kInvalidInput,
            "taylor_ce: probabilities must lie in [0, 1]");
  }
  const double q = 1.0 - probs[static_cast<std::size_t>(label)];
  double power = 1.0;
  double sum = 0.0;
  for (int i = 1; i <= t; ++i) {
    power *= q;
    sum += power / static_cast<double>(i);
  }
  return sum;
}

double taylor_ce_derivative(double f_y, int t) {
  // d/df sum_i (1-f)^i / i = -sum_i (1-f)^(i-1)
  const double q = 1.0 - f_y;
  double power = 1.0;
  double sum = 0.0;
  for (int i = 1; i <= t; ++i) {
    sum += power;
    power *= q;
  }
  return -sum;
}

ProbGradient taylor_ce_batch(const Matrix& probs, const GradeLabels& labels,
                             int t) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size(),
          ErrorKind::kInvalidInput,
          "taylor_ce_batch: label count does not match batch");
  require(probs.cols() == labels.num_classes(), ErrorKind::kInvalidInput,
          "taylor_ce_batch: probability width does not match class count");
  ProbGradient out;
  out.grad = Matrix::Zero(probs.rows(), probs.cols());
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  std::vector<double> row(static_cast<std::size_t>(probs.cols()));
  for (Index k = 0; k < probs.rows(); ++k) {
    for (Index c = 0; c < probs.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = probs(k, c);
    }
    const int y = labels[static_cast<std::size_t>(k)];
    out.value += taylor_ce(row, y, t) * inv_n;
    out.grad(k, y) = taylor_ce_derivative(probs(k, y), t) * inv_n;
  }
  return out;
}

std::pair<LossBreakdown, LossBreakdown> total_loss(double cls_a, double cls_b,
                                                   double nmc, double lr,
                                                   const LossWeights& w) {
  LossBreakdown a{w.cls * cls_a, w.nmc * nmc, w.lr * lr, 0.0};
  LossBreakdown b{w.cls * cls_b, w.nmc * nmc, w.lr * lr, 0.0};
  a.total = a.cls + a.nmc + a.lr;
  b.total = b.cls + b.nmc + b.lr;
  return {a, b};
}

double kl_mutual(std::span<const double> pa, std::span<const double> pb) {
  require(pa.size() == pb.size() && !pa.empty(), ErrorKind::kInvalidInput,
          "kl_mutual: distributions must have the same non-zero length");
  double ab = 0.0;
  double ba = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double p = std::max(pa[i], kProbFloor);
    const double q = std::max(pb[i], kProbFloor);
    ab += p * std::log(p / q);
    ba += q * std::log(q / p);
  }
  return 0.5 * (ab + ba);
}

PairGradient kl_mutual_batch(const Matrix& probs_a, const Matrix& probs_b) {
  require(probs_a.rows() == probs_b.rows() && probs_a.cols() == probs_b.cols(),
          ErrorKind::kInvalidInput, "kl_mutual_batch: shape mismatch");
  PairGradient out;
  out.grad_a = Matrix::Zero(probs_a.rows(), probs_a.cols());
  out.grad_b = Matrix::Zero(probs_b.rows(), probs_b.cols());
  const double inv_n = 1.0 / static_cast<double>(probs_a.rows());
  for (Index k = 0; k < probs_a.rows(); ++k) {
    for (Index c = 0; c < probs_a.cols(); ++c) {
      const double pr = probs_a(k, c);
      const double qr = probs_b(k, c);
      const double p = std::max(pr, kProbFloor);
      const double q = std::max(qr, kProbFloor);
      out.value += 0.5 * (p * std::log(p / q) + q * std::log(q / p)) * inv_n;
      const double lpq = std::log(p / q);
      // The clamp has zero derivative below the floor.
      if (pr > kProbFloor) out.grad_a(k, c) = 0.5 * (lpq + 1.0 - q / p) * inv_n;
      if (qr > kProbFloor) out.grad_b(k, c) = 0.5 * (-lpq + 1.0 - p / q) * inv_n;
    }
  }
  return out;
}

double nt_xent(const LatentMatrix& ga, const LatentMatrix& gb, double tau) {
  return nt_xent_grad(ga, gb, tau).value;
}

PairGradient nt_xent_grad(const LatentMatrix& ga, const LatentMatrix& gb,
                          double tau) {
  require_same_shape(ga, gb, "nt_xent");
  require_tau(tau);
  const RowDirections ua = row_directions(ga.values());
  const RowDirections ub = row_directions(gb.values());
  const Matrix logits = (ua.unit * ub.unit.transpose()) / tau;
  const Index n = logits.rows();
  const double scale = 1.0 / (2.0 * static_cast<double>(n));

  // Row softmax (anchors in a) and column softmax (anchors in b), stabilized.
  Matrix row_sm(n, n);
  Matrix col_sm(n, n);
  double total = 0.0;
  for (Index k = 0; k < n; ++k) {
    const double mr = logits.row(k).maxCoeff();
    const Eigen::RowVectorXd er = (logits.row(k).array() - mr).exp();
    const double zr = er.sum();
    row_sm.row(k) = er / zr;
    total += mr + std::log(zr) - logits(k, k);

    const double mc = logits.col(k).maxCoeff();
    const Eigen::VectorXd ec = (logits.col(k).array() - mc).exp();
    const double zc = ec.sum();
    col_sm.col(k) = ec / zc;
    total += mc + std::log(zc) - logits(k, k);
  }
  Matrix grad_s = (row_sm + col_sm) * (scale / tau);
  grad_s.diagonal().array() -= 2.0 * scale / tau;

  auto [g_a, g_b] = cosine_backward(ua, ub, grad_s);
  PairGradient out;
  out.value = total * scale;
  out.grad_a = std::move(g_a);
  out.grad_b = std::move(g_b);
  return out;
}

}  // namespace mcl::losses
