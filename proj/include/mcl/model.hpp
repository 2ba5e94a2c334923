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

// Dual-branch network: two weight-independent CNN branches, each with a
// backbone (conv blocks + global average pool -> h), two projection heads
// (contrastive and low-rank) and a linear classifier on h.
//
// Layers are written out by hand with explicit backward passes. Parameters
// of a branch live in one contiguous buffer so the optimizer and the
// checkpoint code see a flat vector. The scalar type is a template
// parameter: training runs in float, gradient checks in double.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/image.hpp"
#include "mcl/tensor.hpp"

namespace mcl::model {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Registered backbone architectures. Each is a stack of 3x3 stride-2 conv +
// ReLU blocks followed by global average pooling; the last channel count is
// the feature dimension d.
struct BackboneArch {
  std::string name;
  std::vector<int> channels;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  int feature_dim() const { return channels.back(); }
};

// Throws Error(kConfig) for names not in the registry.
BackboneArch resolve_backbone(std::string_view name);
std::vector<std::string> registered_backbones();

struct ModelConfig {
  std::string backbone = "small-cnn";
  int num_classes = 3;
  // One projection head feeds both the contrastive and the low-rank loss.
  bool shared_head = false;
};

// Per-pixel input normalization: (value / 255 - kInputMean) / kInputStd.
inline constexpr double kInputMean = 0.5;
inline constexpr double kInputStd = 0.25;

template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage* const> images);

template <typename T>
class ParameterBuffer {
 public:
  struct Slice {
    std::string name;
    std::size_t offset;
    std::size_t count;
    // Fan-in for the He-uniform initializer; 0 means zero-initialized.
    int fan_in;
  };

  std::size_t allocate(std::string name, std::size_t count, int fan_in);

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::span<T> grads() noexcept { return grads_; }
  std::span<const T> grads() const noexcept { return grads_; }
  std::size_t size() const noexcept { return values_.size(); }

  T* value_ptr(std::size_t offset) noexcept { return values_.data() + offset; }
  const T* value_ptr(std::size_t offset) const noexcept {
    return values_.data() + offset;
  }
  T* grad_ptr(std::size_t offset) noexcept { return grads_.data() + offset; }

  const std::vector<Slice>& slices() const noexcept { return slices_; }
  // Throws Error(kInvalidInput) for unknown names.
  std::span<T> slice(std::string_view name);
  std::span<const T> slice(std::string_view name) const;
  std::span<T> grad_slice(std::string_view name);

  void zero_grad();

 private:
  std::vector<T> values_;
  std::vector<T> grads_;
  std::vector<Slice> slices_;
};

// 2-D convolution, NCHW, square kernel, zero padding.
template <typename T>
class Conv2d {
 public:
  Conv2d(ParameterBuffer<T>& params, const std::string& name, int in_channels,
         int out_channels, int kernel, int stride, int pad);

  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

  // y must already have shape (n, cout, out_size(h), out_size(w)).
  void forward(const ParameterBuffer<T>& params, const Tensor<T>& x,
               Tensor<T>& y) const;

  // Accumulates weight/bias gradients; writes dx when it is non-null.
  void backward(ParameterBuffer<T>& params, const Tensor<T>& x,
                const Tensor<T>& dy, Tensor<T>* dx) const;

  std::size_t weight_offset() const { return w_; }

 private:
  int cin_, cout_, kernel_, stride_, pad_;
  std::size_t w_, b_;
};

// y = x W^T + b with W stored out x in.
template <typename T>
class Linear {
 public:
  Linear(ParameterBuffer<T>& params, const std::string& name, int in, int out);

  RowMatrix<T> forward(const ParameterBuffer<T>& params,
                       const RowMatrix<T>& x) const;
  // Accumulates parameter gradients and returns dx.
  RowMatrix<T> backward(ParameterBuffer<T>& params, const RowMatrix<T>& x,
                        const RowMatrix<T>& dy) const;

  int in() const { return in_; }
  int out() const { return out_; }
  std::size_t weight_offset() const { return w_; }
  std::size_t bias_offset() const { return b_; }

 private:
  int in_, out_;
  std::size_t w_, b_;
};

// z = W2 relu(W1 h + b1) + b2, both layers d x d.
template <typename T>
struct ProjectionHead {
  Linear<T> fc1;
  Linear<T> fc2;
};

enum class Head { kNmc, kLowRank };

template <typename T>
struct ForwardOutputs {
  Eigen::MatrixXd h;       // N x d pooled backbone features
  Eigen::MatrixXd z_nmc;   // N x d contrastive head output
  Eigen::MatrixXd z_lr;    // N x d low-rank head output
  Eigen::MatrixXd logits;  // N x C
  Eigen::MatrixXd probs;   // N x C, softmax of logits
  Tensor<T> feature_maps;  // last conv block activations, kept for CAM
};

// Gradients arriving at the outputs of one branch. Empty matrices mean "no
// gradient from this path".
struct UpstreamGradients {
  Eigen::MatrixXd d_logits;
  Eigen::MatrixXd d_z_nmc;
  Eigen::MatrixXd d_z_lr;
};

template <typename T>
class BranchNetwork {
 public:
  struct Cache {
    const Tensor<T>* input = nullptr;
    std::vector<Tensor<T>> activations;  // post-ReLU output of each conv
    RowMatrix<T> h;
    RowMatrix<T> nmc_hidden;  // post-ReLU hidden layer of each head
    RowMatrix<T> lr_hidden;
  };

  BranchNetwork(const ModelConfig& config, std::uint64_t seed);

  // When cache is non-null it receives what backward() needs; images must
  // then outlive the cache.
  ForwardOutputs<T> forward(const Tensor<T>& images, Cache* cache = nullptr) const;

  // Accumulates parameter gradients (call params().zero_grad() first).
  void backward(const Cache& cache, const UpstreamGradients& upstream);

  // Applies one projection head to a batch of pooled features.
  RowMatrix<T> project(Head which, const RowMatrix<T>& h) const;

  ParameterBuffer<T>& params() noexcept { return params_; }
  const ParameterBuffer<T>& params() const noexcept { return params_; }
  const ModelConfig& config() const noexcept { return config_; }
  const BackboneArch& arch() const noexcept { return arch_; }
  int feature_dim() const noexcept { return arch_.feature_dim(); }
  int num_classes() const noexcept { return config_.num_classes; }

  // Classifier weight row for one class (length d).
  std::span<const T> classifier_weights(int cls) const;

  // Re-draws every parameter from the seeded initializer.
  void reinitialize(std::uint64_t seed);

 private:
  const ProjectionHead<T>& head(Head which) const;
  RowMatrix<T> head_forward(const ProjectionHead<T>& head, const RowMatrix<T>& h,
                            RowMatrix<T>* hidden) const;
  RowMatrix<T> head_backward(const ProjectionHead<T>& head, const RowMatrix<T>& h,
                             const RowMatrix<T>& hidden, const RowMatrix<T>& dz);

  ModelConfig config_;
  BackboneArch arch_;
  ParameterBuffer<T> params_;
  std::vector<Conv2d<T>> convs_;
  std::vector<ProjectionHead<T>> heads_;  // [nmc, lr] or a single shared head
  Linear<T> classifier_;
};

// The two branches: index 0 consumes FFPE crops, index 1 frozen crops.
template <typename T>
struct DualModel {
  BranchNetwork<T> ffpe;
  BranchNetwork<T> frozen;

  DualModel(const ModelConfig& config, std::uint64_t seed);
};

// Seed used to initialize branch `index` (0 = FFPE, 1 = frozen) of a model
// built from `seed`. Single-modality models use the same derivation so they
// start from the same weights as the matching mutual branch.
std::uint64_t branch_seed(std::uint64_t seed, int index);

template <typename T>
std::pair<ForwardOutputs<T>, ForwardOutputs<T>> forward_pair(
    const DualModel<T>& model, const Tensor<T>& ffpe, const Tensor<T>& frozen,
    typename BranchNetwork<T>::Cache* ffpe_cache = nullptr,
    typename BranchNetwork<T>::Cache* frozen_cache = nullptr);

// Row-wise softmax in double precision.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

// Vector-Jacobian product of softmax_rows.
Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs,
                                 const Eigen::MatrixXd& d_probs);

}  // namespace mcl::model
