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

#include <cstddef>
#include <span>
#include <vector>

namespace mcl {

// Dense NCHW activation tensor.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w),
        data_(static_cast<std::size_t>(n) * c * h * w, T(0)) {}

  int n() const noexcept { return n_; }
  int c() const noexcept { return c_; }
  int h() const noexcept { return h_; }
  int w() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane() const noexcept {
    return static_cast<std::size_t>(h_) * w_;
  }
  std::size_t sample_size() const noexcept { return c_ * plane(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  T* sample(int i) noexcept { return data_.data() + i * sample_size(); }
  const T* sample(int i) const noexcept {
    return data_.data() + i * sample_size();
  }

  T& at(int i, int ch, int y, int x) {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
  }
  const T& at(int i, int ch, int y, int x) const {
    return data_[((static_cast<std::size_t>(i) * c_ + ch) * h_ + y) * w_ + x];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

}  // namespace mcl
