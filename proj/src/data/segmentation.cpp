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


#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "mcl/data.hpp"
#include "mcl/error.hpp"

namespace mcl::data {

bool TissueMask::empty() const {
  return std::none_of(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; });
}

double TissueMask::tissue_fraction() const {
  if (values.empty()) return 0.0;
  std::size_t n = 0;
  for (auto v : values) n += v != 0;
  return static_cast<double>(n) / static_cast<double>(values.size());
}

std::uint8_t saturation(const std::uint8_t* rgb) {
  const int mx = std::max({rgb[0], rgb[1], rgb[2]});
  const int mn = std::min({rgb[0], rgb[1], rgb[2]});
  if (mx == 0) return 0;
  return static_cast<std::uint8_t>((255 * (mx - mn) + mx / 2) / mx);
}

std::optional<int> otsu_threshold(const std::array<std::uint64_t, 256>& hist) {
  double total = 0.0, sum_all = 0.0;
  for (int i = 0; i < 256; ++i) {
    total += static_cast<double>(hist[i]);
    sum_all += static_cast<double>(i) * static_cast<double>(hist[i]);
  }
  double w0 = 0.0, sum0 = 0.0;
  double best = -1.0;
  int first = -1, last = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(hist[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double diff = sum0 / w0 - (sum_all - sum0) / w1;
    const double between = w0 * w1 * diff * diff;
    if (between > best) {
      best = between;
      first = last = t;
    } else if (between == best) {
      last = t;
    }
  }
  if (first < 0) return std::nullopt;
  return (first + last) / 2;
}

TissueMask segment_tissue(const RgbImage& slide, int downsample) {
  require(downsample >= 1, ErrorKind::kInvalidParameter, "downsample must be >= 1");
  require(!slide.empty(), ErrorKind::kInvalidInput, "empty slide image");
  TissueMask mask;
  mask.downsample = downsample;
  mask.width = (slide.width + downsample - 1) / downsample;
  mask.height = (slide.height + downsample - 1) / downsample;
  std::vector<std::uint8_t> sat(static_cast<std::size_t>(mask.width) * mask.height);
  std::array<std::uint64_t, 256> hist{};
  for (int my = 0; my < mask.height; ++my) {
    const int y0 = my * downsample, y1 = std::min(slide.height, y0 + downsample);
    for (int mx = 0; mx < mask.width; ++mx) {
      const int x0 = mx * downsample, x1 = std::min(slide.width, x0 + downsample);
      unsigned sum[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const std::uint8_t* px = slide.at(x, y);
          sum[0] += px[0];
          sum[1] += px[1];
          sum[2] += px[2];
        }
      }
      const unsigned n = static_cast<unsigned>((y1 - y0) * (x1 - x0));
      const std::uint8_t avg[3] = {static_cast<std::uint8_t>((sum[0] + n / 2) / n),
                                   static_cast<std::uint8_t>((sum[1] + n / 2) / n),
                                   static_cast<std::uint8_t>((sum[2] + n / 2) / n)};
      const std::uint8_t s = saturation(avg);
      sat[static_cast<std::size_t>(my) * mask.width + mx] = s;
      ++hist[s];
    }
  }
  mask.values.assign(sat.size(), 0);
  const auto t = otsu_threshold(hist);
  if (!t) {
    spdlog::warn("constant saturation; Otsu threshold undefined, tissue mask is empty");
    mask.threshold = 255;
    return mask;
  }
  mask.threshold = *t;
  for (std::size_t i = 0; i < sat.size(); ++i) mask.values[i] = sat[i] > *t ? 1 : 0;
  return mask;
}

std::vector<Patch> tile_slide(const RgbImage& slide, const TissueMask& mask,
                              const TileOptions& options) {
  require(options.tile_size >= 1, ErrorKind::kInvalidParameter, "tile_size must be >= 1");
  require(options.min_tissue_fraction >= 0.0 && options.min_tissue_fraction <= 1.0,
          ErrorKind::kInvalidParameter, "min_tissue_fraction must lie in [0, 1]");
  require(mask.width == (slide.width + mask.downsample - 1) / mask.downsample &&
              mask.height == (slide.height + mask.downsample - 1) / mask.downsample,
          ErrorKind::kInvalidInput, "tissue mask does not match the slide");
  std::vector<Patch> patches;
  const int ts = options.tile_size;
  if (slide.width < ts || slide.height < ts) {
    spdlog::warn("slide {}x{} is smaller than one {}px tile", slide.width, slide.height, ts);
    return patches;
  }
  const double area = static_cast<double>(ts) * ts;
  for (int ty = 0; ty + ts <= slide.height; ty += ts) {
    for (int tx = 0; tx + ts <= slide.width; tx += ts) {
      std::size_t covered = 0;
      for (int y = ty; y < ty + ts; ++y) {
        for (int x = tx; x < tx + ts; ++x) covered += mask.at_full(x, y);
      }
      if (static_cast<double>(covered) / area < options.min_tissue_fraction || covered == 0) {
        continue;
      }
      patches.push_back({crop(slide, tx, ty, ts, ts), tx, ty});
    }
  }
  return patches;
}

int count_blobs(const std::vector<std::uint8_t>& binary, int width, int height,
                std::size_t min_area) {
  require(binary.size() == static_cast<std::size_t>(width) * height,
          ErrorKind::kInvalidInput, "binary image size mismatch");
  std::vector<std::uint8_t> seen(binary.size(), 0);
  std::vector<int> stack;
  int count = 0;
  for (std::size_t start = 0; start < binary.size(); ++start) {
    if (!binary[start] || seen[start]) continue;
    std::size_t area = 0;
    seen[start] = 1;
    stack.push_back(static_cast<int>(start));
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      ++area;
      const int x = idx % width, y = idx / width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * width + nx;
          if (binary[n] && !seen[n]) {
            seen[n] = 1;
            stack.push_back(static_cast<int>(n));
          }
        }
      }
    }
    if (area >= min_area) ++count;
  }
  return count;
}

bool blob_filter(const RgbImage& patch, int threshold, const BlobOptions& options) {
  std::vector<std::uint8_t> binary(static_cast<std::size_t>(patch.width) * patch.height);
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      binary[static_cast<std::size_t>(y) * patch.width + x] =
          saturation(patch.at(x, y)) > threshold ? 1 : 0;
    }
  }
  const double area = static_cast<double>(binary.size());
  const auto min_area = static_cast<std::size_t>(
      std::max(1.0, std::ceil(options.min_blob_area_fraction * area)));
  return count_blobs(binary, patch.width, patch.height, min_area) >= options.min_blob_count;
}

std::vector<Crop> crop_subregions(const Patch& patch, int crop_size) {
  const RgbImage& img = patch.pixels;
  require(crop_size >= 1 && crop_size <= img.width && crop_size <= img.height,
          ErrorKind::kInvalidParameter,
          "crop size " + std::to_string(crop_size) + " exceeds the patch");
  std::vector<Crop> crops;
  for (int y = 0; y + crop_size <= img.height; y += crop_size) {
    for (int x = 0; x + crop_size <= img.width; x += crop_size) {
      crops.push_back({crop(img, x, y, crop_size, crop_size), patch.x + x, patch.y + y});
    }
  }
  return crops;
}

}  // namespace mcl::data
