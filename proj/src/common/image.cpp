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

#include "mcl/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cstring>

#include "mcl/error.hpp"
#include "mcl/io.hpp"

namespace mcl {

RgbImage crop(const RgbImage& img, int x, int y, int w, int h) {
  require(x >= 0 && y >= 0 && w >= 0 && h >= 0 && x + w <= img.width &&
              y + h <= img.height,
          ErrorKind::kInvalidInput, "crop rectangle outside image");
  RgbImage out(w, h);
  for (int r = 0; r < h; ++r) {
    std::memcpy(out.at(0, r), img.at(x, y + r), static_cast<std::size_t>(w) * 3);
  }
  return out;
}

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorKind::kIo, "cannot decode image " + path.string());
  RgbImage out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* src = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      std::uint8_t* px = out.at(x, y);
      px[0] = src[x][2];
      px[1] = src[x][1];
      px[2] = src[x][0];
    }
  }
  return out;
}

namespace {

void encode_and_write(const std::filesystem::path& path, const cv::Mat& mat) {
  std::vector<uchar> buf;
  // Fixed encoder settings so encoded bytes depend only on pixels.
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 1, cv::IMWRITE_PNG_STRATEGY, cv::IMWRITE_PNG_STRATEGY_HUFFMAN_ONLY};
  if (!cv::imencode(".png", mat, buf, params)) {
    fail(ErrorKind::kIo, "png encoding failed for " + path.string());
  }
  io::write_file_atomic(path, std::string_view(
                                  reinterpret_cast<const char*>(buf.data()),
                                  buf.size()));
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* dst = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* px = img.at(x, y);
      dst[x] = cv::Vec3b(px[2], px[1], px[0]);
    }
  }
  encode_and_write(path, bgr);
}

void write_gray_png(const std::filesystem::path& path, int width, int height,
                    const std::vector<std::uint8_t>& values) {
  require(values.size() == static_cast<std::size_t>(width) * height,
          ErrorKind::kInvalidInput, "grayscale buffer size mismatch");
  cv::Mat gray(height, width, CV_8UC1);
  for (int y = 0; y < height; ++y) {
    std::memcpy(gray.ptr<uchar>(y), values.data() + static_cast<std::size_t>(y) * width,
                static_cast<std::size_t>(width));
  }
  encode_and_write(path, gray);
}

}  // namespace mcl
