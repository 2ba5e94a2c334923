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


#include "mcl/model.hpp"

#include <algorithm>
#include <cmath>

#include "mcl/error.hpp"
#include "mcl/kernels.hpp"
#include "mcl/rng.hpp"

namespace mcl::model {

namespace {

const std::vector<BackboneArch>& registry() {
  static const std::vector<BackboneArch> archs{
      {"small-cnn", {16, 32, 64, 128}},
      // Reduced widths for fast tests and the synthetic benchmark.
      {"tiny-cnn", {8, 16, 32, 32}},
  };
  return archs;
}

template <typename T>
RowMatrix<T> relu(const RowMatrix<T>& x) {
  RowMatrix<T> y(x.rows(), x.cols());
  kernels::relu_forward(x.data(), y.data(), static_cast<std::size_t>(x.size()));
  return y;
}

template <typename T>
RowMatrix<T> to_scalar(const Eigen::MatrixXd& m) {
  return m.cast<T>();
}

}  // namespace

BackboneArch resolve_backbone(std::string_view name) {
  for (const auto& a : registry()) {
    if (a.name == name) return a;
  }
  fail(ErrorKind::kConfig, "unknown backbone architecture '" + std::string(name) + "'");
}

std::vector<std::string> registered_backbones() {
  std::vector<std::string> names;
  for (const auto& a : registry()) names.push_back(a.name);
  return names;
}

std::uint64_t branch_seed(std::uint64_t seed, int index) {
  return derive_seed(seed, static_cast<std::uint64_t>(index));
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const RgbImage* const> images) {
  require(!images.empty(), ErrorKind::kInvalidInput, "empty image batch");
  const int w = images[0]->width;
  const int h = images[0]->height;
  require(w > 0 && h > 0, ErrorKind::kInvalidInput, "empty image in batch");
  Tensor<T> t(static_cast<int>(images.size()), 3, h, w);
  const double scale = 1.0 / (255.0 * kInputStd);
  const double shift = kInputMean / kInputStd;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const RgbImage& img = *images[i];
    require(img.width == w && img.height == h, ErrorKind::kInvalidInput,
            "images in a batch must share one size");
    const int n = static_cast<int>(i);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::uint8_t* px = img.at(x, y);
        for (int c = 0; c < 3; ++c) {
          t.at(n, c, y, x) = static_cast<T>(px[c] * scale - shift);
        }
      }
    }
  }
  return t;
}

// ParameterBuffer

template <typename T>
std::size_t ParameterBuffer<T>::allocate(std::string name, std::size_t count,
                                         int fan_in) {
  const std::size_t offset = values_.size();
  slices_.push_back({std::move(name), offset, count, fan_in});
  values_.resize(offset + count, T(0));
  grads_.resize(offset + count, T(0));
  return offset;
}

template <typename T>
std::span<T> ParameterBuffer<T>::slice(std::string_view name) {
  for (const auto& s : slices_) {
    if (s.name == name) return std::span<T>(values_.data() + s.offset, s.count);
  }
  fail(ErrorKind::kInvalidInput, "unknown parameter '" + std::string(name) + "'");
}

template <typename T>
std::span<const T> ParameterBuffer<T>::slice(std::string_view name) const {
  return const_cast<ParameterBuffer*>(this)->slice(name);
}

template <typename T>
std::span<T> ParameterBuffer<T>::grad_slice(std::string_view name) {
  for (const auto& s : slices_) {
    if (s.name == name) return std::span<T>(grads_.data() + s.offset, s.count);
  }
  fail(ErrorKind::kInvalidInput, "unknown parameter '" + std::string(name) + "'");
}

template <typename T>
void ParameterBuffer<T>::zero_grad() {
  std::fill(grads_.begin(), grads_.end(), T(0));
}

// Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParameterBuffer<T>& params, const std::string& name,
                  int in_channels, int out_channels, int kernel, int stride,
                  int pad)
    : cin_(in_channels), cout_(out_channels), kernel_(kernel), stride_(stride),
      pad_(pad) {
  const int fan_in = cin_ * kernel_ * kernel_;
  w_ = params.allocate(name + ".weight",
                       static_cast<std::size_t>(cout_) * fan_in, fan_in);
  b_ = params.allocate(name + ".bias", static_cast<std::size_t>(cout_), 0);
}

namespace {

// Unfolds one CHW sample. With transpose=false the layout is (K x P), row
// index (c, ky, kx) and column index (oy, ox); with transpose=true it is
// (P x K).
template <typename T>
void unfold(const T* x, int c, int h, int w, int k, int s, int pad, int ho,
            int wo, bool transpose, T* out) {
  const std::size_t kk = static_cast<std::size_t>(c) * k * k;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - pad + kx;
            T v = T(0);
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
              v = x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
            }
            const std::size_t col = static_cast<std::size_t>(oy) * wo + ox;
            if (transpose) {
              out[col * kk + row] = v;
            } else {
              out[row * p + col] = v;
            }
          }
        }
      }
    }
  }
}

// Adjoint of unfold (K x P layout): scatters columns back into a CHW sample.
template <typename T>
void fold(const T* col, int c, int h, int w, int k, int s, int pad, int ho,
          int wo, T* x) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  std::fill(x, x + static_cast<std::size_t>(c) * h * w, T(0));
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - pad + kx;
            if (ix < 0 || ix >= w) continue;
            x[(static_cast<std::size_t>(ci) * h + iy) * w + ix] +=
                col[row * p + static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void Conv2d<T>::forward(const ParameterBuffer<T>& params, const Tensor<T>& x,
                        Tensor<T>& y) const {
  require(x.c() == cin_, ErrorKind::kInvalidInput, "conv input channel mismatch");
  const int ho = out_size(x.h());
  const int wo = out_size(x.w());
  require(y.n() == x.n() && y.c() == cout_ && y.h() == ho && y.w() == wo,
          ErrorKind::kInvalidInput, "conv output shape mismatch");
  const int kk = cin_ * kernel_ * kernel_;
  const int p = ho * wo;
  std::vector<T> col(static_cast<std::size_t>(kk) * p);
  const T* w = params.value_ptr(w_);
  const T* b = params.value_ptr(b_);
  for (int i = 0; i < x.n(); ++i) {
    unfold(x.sample(i), cin_, x.h(), x.w(), kernel_, stride_, pad_, ho, wo, false,
           col.data());
    T* out = y.sample(i);
    kernels::gemm<T>(cout_, p, kk, w, kk, col.data(), p, out, p, false);
    for (int co = 0; co < cout_; ++co) {
      T* row = out + static_cast<std::size_t>(co) * p;
      for (int j = 0; j < p; ++j) row[j] += b[co];
    }
  }
}

template <typename T>
void Conv2d<T>::backward(ParameterBuffer<T>& params, const Tensor<T>& x,
                         const Tensor<T>& dy, Tensor<T>* dx) const {
  const int ho = out_size(x.h());
  const int wo = out_size(x.w());
  require(dy.n() == x.n() && dy.c() == cout_ && dy.h() == ho && dy.w() == wo,
          ErrorKind::kInvalidInput, "conv gradient shape mismatch");
  const int kk = cin_ * kernel_ * kernel_;
  const int p = ho * wo;
  std::vector<T> rows(static_cast<std::size_t>(kk) * p);
  std::vector<T> dcol;
  std::vector<T> wt;
  if (dx != nullptr) {
    require(dx->same_shape(x), ErrorKind::kInvalidInput, "conv dx shape mismatch");
    dcol.resize(rows.size());
    const T* w = params.value_ptr(w_);
    wt.resize(static_cast<std::size_t>(kk) * cout_);
    for (int co = 0; co < cout_; ++co) {
      for (int r = 0; r < kk; ++r) {
        wt[static_cast<std::size_t>(r) * cout_ + co] =
            w[static_cast<std::size_t>(co) * kk + r];
      }
    }
  }
  T* gw = params.grad_ptr(w_);
  T* gb = params.grad_ptr(b_);
  for (int i = 0; i < x.n(); ++i) {
    const T* g = dy.sample(i);
    unfold(x.sample(i), cin_, x.h(), x.w(), kernel_, stride_, pad_, ho, wo, true,
           rows.data());
    kernels::gemm<T>(cout_, kk, p, g, p, rows.data(), kk, gw, kk, true);
    for (int co = 0; co < cout_; ++co) {
      const T* row = g + static_cast<std::size_t>(co) * p;
      T acc = T(0);
      for (int j = 0; j < p; ++j) acc += row[j];
      gb[co] += acc;
    }
    if (dx != nullptr) {
      kernels::gemm<T>(kk, p, cout_, wt.data(), cout_, g, p, dcol.data(), p, false);
      fold(dcol.data(), cin_, x.h(), x.w(), kernel_, stride_, pad_, ho, wo,
           dx->sample(i));
    }
  }
}

// Linear

template <typename T>
Linear<T>::Linear(ParameterBuffer<T>& params, const std::string& name, int in,
                  int out)
    : in_(in), out_(out) {
  w_ = params.allocate(name + ".weight", static_cast<std::size_t>(out) * in, in);
  b_ = params.allocate(name + ".bias", static_cast<std::size_t>(out), 0);
}

template <typename T>
RowMatrix<T> Linear<T>::forward(const ParameterBuffer<T>& params,
                                const RowMatrix<T>& x) const {
  require(x.cols() == in_, ErrorKind::kInvalidInput,
          "linear input dimension mismatch");
  const int n = static_cast<int>(x.rows());
  RowMatrix<T> y(n, out_);
  if (n == 0) return y;
  const T* w = params.value_ptr(w_);
  RowMatrix<T> wt(in_, out_);
  for (int o = 0; o < out_; ++o) {
    for (int i = 0; i < in_; ++i) wt(i, o) = w[static_cast<std::size_t>(o) * in_ + i];
  }
  kernels::gemm<T>(n, out_, in_, x.data(), in_, wt.data(), out_, y.data(), out_,
                   false);
  const T* b = params.value_ptr(b_);
  for (int r = 0; r < n; ++r) {
    for (int o = 0; o < out_; ++o) y(r, o) += b[o];
  }
  return y;
}

template <typename T>
RowMatrix<T> Linear<T>::backward(ParameterBuffer<T>& params, const RowMatrix<T>& x,
                                 const RowMatrix<T>& dy) const {
  require(x.cols() == in_ && dy.cols() == out_ && x.rows() == dy.rows(),
          ErrorKind::kInvalidInput, "linear gradient shape mismatch");
  const int n = static_cast<int>(x.rows());
  RowMatrix<T> dx(n, in_);
  if (n == 0) return dx;
  RowMatrix<T> dyt = dy.transpose();
  kernels::gemm<T>(out_, in_, n, dyt.data(), n, x.data(), in_, params.grad_ptr(w_),
                   in_, true);
  T* gb = params.grad_ptr(b_);
  for (int o = 0; o < out_; ++o) gb[o] += dy.col(o).sum();
  kernels::gemm<T>(n, in_, out_, dy.data(), out_, params.value_ptr(w_), in_,
                   dx.data(), in_, false);
  return dx;
}

// BranchNetwork

template <typename T>
BranchNetwork<T>::BranchNetwork(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      arch_(resolve_backbone(config.backbone)),
      classifier_(params_, "classifier", arch_.feature_dim(),
                  std::max(config.num_classes, 1)) {
  require(config.num_classes >= 2, ErrorKind::kConfig,
          "num_classes must be at least 2");
  // The classifier was allocated first by member order; the rest follow in
  // network order.
  int cin = 3;
  for (std::size_t l = 0; l < arch_.channels.size(); ++l) {
    convs_.emplace_back(params_, "conv" + std::to_string(l + 1), cin,
                        arch_.channels[l], arch_.kernel, arch_.stride, arch_.pad);
    cin = arch_.channels[l];
  }
  const int d = arch_.feature_dim();
  const int num_heads = config_.shared_head ? 1 : 2;
  const char* names[] = {"nmc_head", "lr_head"};
  for (int i = 0; i < num_heads; ++i) {
    const std::string base = config_.shared_head ? "head" : names[i];
    heads_.push_back({Linear<T>(params_, base + ".fc1", d, d),
                      Linear<T>(params_, base + ".fc2", d, d)});
  }
  reinitialize(seed);
}

template <typename T>
void BranchNetwork<T>::reinitialize(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& s : params_.slices()) {
    T* v = params_.value_ptr(s.offset);
    if (s.fan_in == 0) {
      std::fill(v, v + s.count, T(0));
      continue;
    }
    const double bound = std::sqrt(6.0 / s.fan_in);
    for (std::size_t i = 0; i < s.count; ++i) {
      v[i] = static_cast<T>(uniform(rng, -bound, bound));
    }
  }
  params_.zero_grad();
}

template <typename T>
const ProjectionHead<T>& BranchNetwork<T>::head(Head which) const {
  if (config_.shared_head) return heads_[0];
  return heads_[which == Head::kNmc ? 0 : 1];
}

template <typename T>
RowMatrix<T> BranchNetwork<T>::head_forward(const ProjectionHead<T>& head,
                                            const RowMatrix<T>& h,
                                            RowMatrix<T>* hidden) const {
  RowMatrix<T> a = relu(head.fc1.forward(params_, h));
  RowMatrix<T> z = head.fc2.forward(params_, a);
  if (hidden != nullptr) *hidden = std::move(a);
  return z;
}

template <typename T>
RowMatrix<T> BranchNetwork<T>::head_backward(const ProjectionHead<T>& head,
                                             const RowMatrix<T>& h,
                                             const RowMatrix<T>& hidden,
                                             const RowMatrix<T>& dz) {
  RowMatrix<T> da = head.fc2.backward(params_, hidden, dz);
  RowMatrix<T> dpre(da.rows(), da.cols());
  kernels::relu_backward(hidden.data(), da.data(), dpre.data(),
                         static_cast<std::size_t>(da.size()));
  return head.fc1.backward(params_, h, dpre);
}

template <typename T>
RowMatrix<T> BranchNetwork<T>::project(Head which, const RowMatrix<T>& h) const {
  require(h.cols() == feature_dim(), ErrorKind::kInvalidInput,
          "latent dimension does not match the projection head");
  return head_forward(head(which), h, nullptr);
}

template <typename T>
std::span<const T> BranchNetwork<T>::classifier_weights(int cls) const {
  require(cls >= 0 && cls < config_.num_classes, ErrorKind::kInvalidInput,
          "class index out of range");
  const int d = feature_dim();
  return std::span<const T>(
      params_.value_ptr(classifier_.weight_offset()) + static_cast<std::size_t>(cls) * d,
      static_cast<std::size_t>(d));
}

template <typename T>
ForwardOutputs<T> BranchNetwork<T>::forward(const Tensor<T>& images,
                                            Cache* cache) const {
  require(images.n() >= 1 && images.c() == 3, ErrorKind::kInvalidInput,
          "expected a non-empty batch of 3-channel images");
  std::vector<Tensor<T>> acts;
  acts.reserve(convs_.size());
  const Tensor<T>* x = &images;
  for (const auto& conv : convs_) {
    Tensor<T> y(x->n(), conv.out_channels(), conv.out_size(x->h()),
                conv.out_size(x->w()));
    require(y.h() > 0 && y.w() > 0, ErrorKind::kInvalidInput,
            "input too small for the backbone");
    conv.forward(params_, *x, y);
    kernels::relu_forward(y.data(), y.data(), y.size());
    acts.push_back(std::move(y));
    x = &acts.back();
  }
  const Tensor<T>& last = acts.back();
  const int n = last.n();
  const int d = last.c();
  RowMatrix<T> h(n, d);
  const T inv = T(1) / static_cast<T>(last.plane());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) {
      const T* p = last.sample(i) + static_cast<std::size_t>(c) * last.plane();
      T acc = T(0);
      for (std::size_t j = 0; j < last.plane(); ++j) acc += p[j];
      h(i, c) = acc * inv;
    }
  }

  ForwardOutputs<T> out;
  RowMatrix<T> nmc_hidden, lr_hidden;
  RowMatrix<T> z_nmc = head_forward(head(Head::kNmc), h, &nmc_hidden);
  out.z_nmc = z_nmc.template cast<double>();
  if (config_.shared_head) {
    out.z_lr = out.z_nmc;
  } else {
    out.z_lr = head_forward(head(Head::kLowRank), h, &lr_hidden).template cast<double>();
  }
  out.logits = classifier_.forward(params_, h).template cast<double>();
  out.probs = softmax_rows(out.logits);
  out.h = h.template cast<double>();
  out.feature_maps = last;

  if (cache != nullptr) {
    cache->input = &images;
    cache->activations = std::move(acts);
    cache->h = std::move(h);
    cache->nmc_hidden = std::move(nmc_hidden);
    cache->lr_hidden = std::move(lr_hidden);
  }
  return out;
}

template <typename T>
void BranchNetwork<T>::backward(const Cache& cache, const UpstreamGradients& up) {
  require(cache.input != nullptr && cache.activations.size() == convs_.size(),
          ErrorKind::kInvalidInput, "backward called without a forward cache");
  const RowMatrix<T>& h = cache.h;
  const Eigen::Index n = h.rows();
  auto check = [&](const Eigen::MatrixXd& g, Eigen::Index cols, const char* what) {
    require(g.size() == 0 || (g.rows() == n && g.cols() == cols),
            ErrorKind::kInvalidInput, std::string("bad upstream gradient shape: ") + what);
  };
  check(up.d_logits, config_.num_classes, "logits");
  check(up.d_z_nmc, feature_dim(), "z_nmc");
  check(up.d_z_lr, feature_dim(), "z_lr");

  RowMatrix<T> dh = RowMatrix<T>::Zero(n, feature_dim());
  if (up.d_logits.size() != 0) {
    dh += classifier_.backward(params_, h, to_scalar<T>(up.d_logits));
  }
  if (config_.shared_head) {
    Eigen::MatrixXd dz;
    if (up.d_z_nmc.size() != 0) dz = up.d_z_nmc;
    if (up.d_z_lr.size() != 0) dz = dz.size() == 0 ? up.d_z_lr : Eigen::MatrixXd(dz + up.d_z_lr);
    if (dz.size() != 0) {
      dh += head_backward(heads_[0], h, cache.nmc_hidden, to_scalar<T>(dz));
    }
  } else {
    if (up.d_z_nmc.size() != 0) {
      dh += head_backward(heads_[0], h, cache.nmc_hidden, to_scalar<T>(up.d_z_nmc));
    }
    if (up.d_z_lr.size() != 0) {
      dh += head_backward(heads_[1], h, cache.lr_hidden, to_scalar<T>(up.d_z_lr));
    }
  }

  const Tensor<T>& last = cache.activations.back();
  Tensor<T> dact(last.n(), last.c(), last.h(), last.w());
  const T inv = T(1) / static_cast<T>(last.plane());
  for (int i = 0; i < last.n(); ++i) {
    for (int c = 0; c < last.c(); ++c) {
      T* p = dact.sample(i) + static_cast<std::size_t>(c) * last.plane();
      std::fill(p, p + last.plane(), dh(i, c) * inv);
    }
  }
  for (std::size_t l = convs_.size(); l-- > 0;) {
    const Tensor<T>& act = cache.activations[l];
    Tensor<T> dpre(act.n(), act.c(), act.h(), act.w());
    kernels::relu_backward(act.data(), dact.data(), dpre.data(), act.size());
    const Tensor<T>& x = l == 0 ? *cache.input : cache.activations[l - 1];
    if (l == 0) {
      convs_[l].backward(params_, x, dpre, nullptr);
    } else {
      Tensor<T> dx(x.n(), x.c(), x.h(), x.w());
      convs_[l].backward(params_, x, dpre, &dx);
      dact = std::move(dx);
    }
  }
}

template <typename T>
DualModel<T>::DualModel(const ModelConfig& config, std::uint64_t seed)
    : ffpe(config, branch_seed(seed, 0)), frozen(config, branch_seed(seed, 1)) {}

template <typename T>
std::pair<ForwardOutputs<T>, ForwardOutputs<T>> forward_pair(
    const DualModel<T>& model, const Tensor<T>& ffpe, const Tensor<T>& frozen,
    typename BranchNetwork<T>::Cache* ffpe_cache,
    typename BranchNetwork<T>::Cache* frozen_cache) {
  require(ffpe.n() == frozen.n(), ErrorKind::kInvalidInput,
          "paired batches must have the same size");
  require(ffpe.c() == frozen.c() && ffpe.h() == frozen.h() && ffpe.w() == frozen.w(),
          ErrorKind::kInvalidInput, "paired batches must have the same image shape");
  auto a = model.ffpe.forward(ffpe, ffpe_cache);
  auto b = model.frozen.forward(frozen, frozen_cache);
  return {std::move(a), std::move(b)};
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      p(i, j) = std::exp(logits(i, j) - m);
      z += p(i, j);
    }
    p.row(i) /= z;
  }
  return p;
}

Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs,
                                 const Eigen::MatrixXd& d_probs) {
  require(probs.rows() == d_probs.rows() && probs.cols() == d_probs.cols(),
          ErrorKind::kInvalidInput, "softmax gradient shape mismatch");
  Eigen::MatrixXd out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double s = probs.row(i).dot(d_probs.row(i));
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      out(i, j) = probs(i, j) * (d_probs(i, j) - s);
    }
  }
  return out;
}

#define MCL_INSTANTIATE(T)                                                      \
  template Tensor<T> images_to_tensor<T>(std::span<const RgbImage* const>);     \
  template class ParameterBuffer<T>;                                            \
  template class Conv2d<T>;                                                     \
  template class Linear<T>;                                                     \
  template class BranchNetwork<T>;                                              \
  template struct DualModel<T>;                                                 \
  template std::pair<ForwardOutputs<T>, ForwardOutputs<T>> forward_pair<T>(     \
      const DualModel<T>&, const Tensor<T>&, const Tensor<T>&,                  \
      typename BranchNetwork<T>::Cache*, typename BranchNetwork<T>::Cache*);

MCL_INSTANTIATE(float)
MCL_INSTANTIATE(double)

#undef MCL_INSTANTIATE

}  // namespace mcl::model
