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

// Loss functions for mutual contrastive low-rank training.
//
// All functions here are pure: they read their arguments, allocate their
// results and touch no shared state, so they may be called from any thread.
// Everything is computed in double precision; the network casts its float
// activations on the way in and the gradients on the way out.
//
// Latent batches are row-per-sample (N x d). The low-rank loss internally
// works on the column-per-sample stacked matrix M and transposes back.

#include <Eigen/Core>
#include <span>
#include <utility>
#include <vector>

namespace mcl::losses {

using Matrix = Eigen::MatrixXd;

// A batch of feature vectors, one row per sample. Construction rejects empty
// shapes and non-finite entries.
class LatentMatrix {
 public:
  explicit LatentMatrix(Matrix values);

  const Matrix& values() const noexcept { return values_; }
  Eigen::Index batch_size() const noexcept { return values_.rows(); }
  Eigen::Index dim() const noexcept { return values_.cols(); }

 private:
  Matrix values_;
};

// Integer grade labels in [0, num_classes).
class GradeLabels {
 public:
  GradeLabels(std::vector<int> labels, int num_classes);

  std::span<const int> labels() const noexcept { return labels_; }
  int num_classes() const noexcept { return num_classes_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int operator[](std::size_t i) const { return labels_[i]; }

 private:
  std::vector<int> labels_;
  int num_classes_;
};

// Per-modality decomposition of the training objective. The stored terms are
// already weighted, so total == cls + nmc + lr holds exactly.
struct LossBreakdown {
  double cls = 0.0;
  double nmc = 0.0;
  double lr = 0.0;
  double total = 0.0;
};

struct LossWeights {
  double cls = 1.0;
  double nmc = 1.0;
  double lr = 1.0;
};

// Where the centring/rescaling statistics are taken from.
//   kPerSample: mean/variance of each row over its d features (layer norm).
//   kPerBatch:  mean/variance of each feature over the N rows.
enum class NormStatistics { kPerSample, kPerBatch };

// How the two modality embeddings are combined into M for the low-rank loss.
//   kVertical:   M is 2d x N, column k = [x^a_k ; x^b_k].
//   kHorizontal: M is d x 2N, columns are all samples of both modalities.
enum class Stacking { kVertical, kHorizontal };

LatentMatrix layer_normalize(const LatentMatrix& g, double eps,
                             NormStatistics stats = NormStatistics::kPerSample);

// Vector-Jacobian product of layer_normalize at g.
Matrix layer_normalize_backward(const LatentMatrix& g, const Matrix& grad_out,
                                double eps,
                                NormStatistics stats = NormStatistics::kPerSample);

// Entry (k, i) is the cosine between row k of a and row i of b.
Matrix cosine_similarity_matrix(const LatentMatrix& a, const LatentMatrix& b);

// A scalar loss over two row-aligned batches and its gradient with respect to
// each of them.
struct PairGradient {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

struct NmcOptions {
  double tau = 0.5;
  double eps = 1e-5;
  NormStatistics stats = NormStatistics::kPerSample;
};

// Normalized modality contrastive loss. Both batches are layer-normalized,
// then for each anchor the matching row of the other modality is the positive
// and the remaining N-1 rows are the negatives. The positive is *not* part of
// the denominator, so the value can be negative; it always lies in
// [log(N-1) - 2/tau, log(N-1) + 2/tau].
//
// The exponentials are evaluated directly. For tau below roughly 1/709 they
// overflow double precision and the loss comes back non-finite, which the
// trainer reports as a collapse.
double nmc_loss(const LatentMatrix& ga, const LatentMatrix& gb,
                const NmcOptions& opts = {});
PairGradient nmc_loss_grad(const LatentMatrix& ga, const LatentMatrix& gb,
                           const NmcOptions& opts = {});

// Sum of singular values.
double nuclear_norm(const Matrix& m);

struct LowRankOptions {
  double delta = 1.0;
  // Singular directions count toward the subgradient only when their value
  // exceeds sv_threshold_rel * sigma_max(M).
  double sv_threshold_rel = 1e-6;
  Stacking stacking = Stacking::kVertical;
};

struct LowRankValue {
  double value = 0.0;
  // Classes in [0, C) with no column in this batch. Each contributes delta.
  int empty_classes = 0;
};

// sum_c max(delta, ||M_c||_*) - ||M||_*
LowRankValue lowrank_loss(const LatentMatrix& xa, const LatentMatrix& xb,
                          const GradeLabels& labels,
                          const LowRankOptions& opts = {});

struct LowRankGradient : PairGradient {
  int empty_classes = 0;
};

// Subgradient of lowrank_loss built from thresholded singular vectors:
// sum over active classes of U_c V_c^T scattered into the class columns,
// minus U V^T of the full matrix.
LowRankGradient lowrank_subgradient(const LatentMatrix& xa,
                                    const LatentMatrix& xb,
                                    const GradeLabels& labels,
                                    const LowRankOptions& opts = {});

// Stacked matrix used by the low-rank loss, exposed for diagnostics and tests.
Matrix stack_modalities(const LatentMatrix& xa, const LatentMatrix& xb,
                        Stacking stacking);

// Truncated Taylor series of -log(f_y): sum_{i=1..t} (1 - f_y)^i / i.
double taylor_ce(std::span<const double> probs, int label, int t);

// d taylor_ce / d f_y.
double taylor_ce_derivative(double f_y, int t);

// Batch mean of taylor_ce over the rows of probs, with the gradient with
// respect to probs.
struct ProbGradient {
  double value = 0.0;
  Matrix grad;
};
ProbGradient taylor_ce_batch(const Matrix& probs, const GradeLabels& labels,
                             int t);

// Per-modality totals: shared nmc and lr terms are added to both branches.
std::pair<LossBreakdown, LossBreakdown> total_loss(double cls_a, double cls_b,
                                                   double nmc, double lr,
                                                   const LossWeights& w = {});

// Probabilities below this are clamped before taking logarithms.
inline constexpr double kProbFloor = 1e-12;

// Symmetric KL divergence 0.5 * (KL(pa||pb) + KL(pb||pa)).
double kl_mutual(std::span<const double> pa, std::span<const double> pb);

// Batch mean of kl_mutual over row pairs with gradients for both sides.
PairGradient kl_mutual_batch(const Matrix& probs_a, const Matrix& probs_b);

// Cross-modal NT-Xent: l2-normalized rows, the positive included in the
// denominator, averaged over both anchor directions. Always >= 0.
double nt_xent(const LatentMatrix& ga, const LatentMatrix& gb, double tau);
PairGradient nt_xent_grad(const LatentMatrix& ga, const LatentMatrix& gb,
                          double tau);

}  // namespace mcl::losses
