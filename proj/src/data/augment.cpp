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


#include <algorithm>
#include <cmath>

#include "mcl/data.hpp"
#include "mcl/error.hpp"

namespace mcl::data {

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.rotate = c.flip_horizontal = c.flip_vertical = c.hsv = c.brightness_contrast = false;
  return c;
}

RgbImage rotate90(const RgbImage& img, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return img;
  const int w = img.width, h = img.height;
  RgbImage out = (k == 2) ? RgbImage(w, h) : RgbImage(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ox, oy;
      if (k == 1) {
        ox = y;
        oy = w - 1 - x;
      } else if (k == 2) {
        ox = w - 1 - x;
        oy = h - 1 - y;
      } else {
        ox = h - 1 - y;
        oy = x;
      }
      std::copy_n(img.at(x, y), 3, out.at(ox, oy));
    }
  }
  return out;
}

RgbImage flip(const RgbImage& img, bool horizontal) {
  RgbImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int sx = horizontal ? img.width - 1 - x : x;
      const int sy = horizontal ? y : img.height - 1 - y;
      std::copy_n(img.at(sx, sy), 3, out.at(x, y));
    }
  }
  return out;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void shift_hsv(std::uint8_t* px, double dh, double ds, double dv) {
  const double r = px[0] / 255.0, g = px[1] / 255.0, b = px[2] / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  double h = 0.0;
  if (c > 0.0) {
    if (mx == r) {
      h = std::fmod((g - b) / c + 6.0, 6.0);
    } else if (mx == g) {
      h = (b - r) / c + 2.0;
    } else {
      h = (r - g) / c + 4.0;
    }
    h /= 6.0;
  }
  double s = mx > 0.0 ? c / mx : 0.0;
  double v = mx;
  h = std::fmod(h + dh + 1.0, 1.0);
  s = std::clamp(s + ds, 0.0, 1.0);
  v = std::clamp(v + dv, 0.0, 1.0);
  const double hh = h * 6.0;
  const double cc = v * s;
  const double xx = cc * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
  double rgb[3];
  switch (static_cast<int>(hh) % 6) {
    case 0: rgb[0] = cc; rgb[1] = xx; rgb[2] = 0; break;
    case 1: rgb[0] = xx; rgb[1] = cc; rgb[2] = 0; break;
    case 2: rgb[0] = 0; rgb[1] = cc; rgb[2] = xx; break;
    case 3: rgb[0] = 0; rgb[1] = xx; rgb[2] = cc; break;
    case 4: rgb[0] = xx; rgb[1] = 0; rgb[2] = cc; break;
    default: rgb[0] = cc; rgb[1] = 0; rgb[2] = xx; break;
  }
  const double m = v - cc;
  for (int i = 0; i < 3; ++i) px[i] = to_byte((rgb[i] + m) * 255.0);
}

}  // namespace

RgbImage augment(const RgbImage& img, const AugmentationConfig& config, Rng& rng) {
  RgbImage out = img;
  if (config.rotate) {
    out = rotate90(out, static_cast<int>(uniform_index(rng, 4)));
  }
  if (config.flip_horizontal && uniform01(rng) < 0.5) out = flip(out, true);
  if (config.flip_vertical && uniform01(rng) < 0.5) out = flip(out, false);
  if (config.hsv) {
    const double dh = uniform(rng, -config.hue_shift, config.hue_shift);
    const double ds = uniform(rng, -config.saturation_shift, config.saturation_shift);
    const double dv = uniform(rng, -config.value_shift, config.value_shift);
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
      shift_hsv(out.pixels.data() + i, dh, ds, dv);
    }
  }
  if (config.brightness_contrast) {
    const double b = uniform(rng, -config.brightness, config.brightness) * 255.0;
    const double c = 1.0 + uniform(rng, -config.contrast, config.contrast);
    for (auto& v : out.pixels) v = to_byte((v - 127.5) * c + 127.5 + b);
  }
  return out;
}

}  // namespace mcl::data
