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

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mcl {

// 8-bit interleaved RGB image, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h),
        pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const noexcept { return pixels.empty(); }

  std::uint8_t* at(int x, int y) noexcept {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* at(int x, int y) const noexcept {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  bool operator==(const RgbImage&) const = default;
};

// Copy of the rectangle [x, x + w) x [y, y + h). The rectangle must lie
// inside the image.
RgbImage crop(const RgbImage& img, int x, int y, int w, int h);

// Reads PNG or TIFF (anything the codec layer decodes). Throws Error(kIo).
RgbImage read_image(const std::filesystem::path& path);

// Writes PNG atomically (temp file + rename). Throws Error(kIo).
void write_png(const std::filesystem::path& path, const RgbImage& img);

// Single-channel 8-bit image written as grayscale PNG.
void write_gray_png(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& values);

}  // namespace mcl
