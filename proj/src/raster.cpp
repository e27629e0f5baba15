// Copyright 2026 The t2l Authors
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

#include "t2l/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace t2l {

namespace {

template <class Tag>
void check_finite(const Image<Tag>& img, double hi, const char* what) {
  for (std::size_t k = 0; k < img.size(); ++k) {
    const float v = img.values()[k];
    if (!std::isfinite(v) || v < 0.0f || v > hi) {
      throw DomainError(std::string(what) + ": value " + std::to_string(v) + " at element " +
                        std::to_string(k) + " out of range");
    }
  }
}

// One output sample of a separable resampling pass: input indices and weights.
struct Taps {
  std::vector<int> index;
  std::vector<double> weight;
};

std::vector<Taps> axis_taps(int in, int out) {
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  if (in == out) {
    for (int o = 0; o < out; ++o) taps[o] = {{o}, {1.0}};
    return taps;
  }
  const double scale = static_cast<double>(in) / out;
  if (out < in) {
    for (int o = 0; o < out; ++o) {
      const double lo = o * scale;
      const double hi = (o + 1) * scale;
      for (int k = static_cast<int>(std::floor(lo)); k < in && k < hi; ++k) {
        const double overlap = std::min<double>(k + 1, hi) - std::max<double>(k, lo);
        if (overlap > 0) {
          taps[o].index.push_back(k);
          taps[o].weight.push_back(overlap / scale);
        }
      }
    }
    return taps;
  }
  for (int o = 0; o < out; ++o) {
    double x = (o + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    const int k0 = static_cast<int>(std::floor(x));
    const int k1 = std::min(k0 + 1, in - 1);
    const double t = x - k0;
    if (k1 == k0 || t == 0.0) {
      taps[o] = {{k0}, {1.0}};
    } else {
      taps[o] = {{k0, k1}, {1.0 - t, t}};
    }
  }
  return taps;
}

}  // namespace

void validate(const LdrImage& img) { check_finite(img, 1.0, "LdrImage"); }
void validate(const HdrImage& img) {
  check_finite(img, std::numeric_limits<double>::infinity(), "HdrImage");
}

std::size_t CalibMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

double luminance(float r, float g, float b) {
  return 0.2126 * r + 0.7152 * g + 0.0722 * b;
}

LdrImage reinhard_tonemap(const HdrImage& hdr, TonemapMode mode) {
  LdrImage out(hdr.height(), hdr.width());
  for (int r = 0; r < hdr.height(); ++r) {
    for (int c = 0; c < hdr.width(); ++c) {
      const float* in = hdr.pixel(r, c);
      float* o = out.pixel(r, c);
      if (mode == TonemapMode::kPerChannel) {
        for (int k = 0; k < 3; ++k) {
          const double v = in[k];
          o[k] = static_cast<float>(std::clamp(v / (1.0 + v), 0.0, 1.0));
        }
        continue;
      }
      const double y = luminance(in[0], in[1], in[2]);
      if (y <= 0.0) {
        o[0] = o[1] = o[2] = 0.0f;
        continue;
      }
      const double ratio = (y / (1.0 + y)) / y;
      for (int k = 0; k < 3; ++k) {
        o[k] = static_cast<float>(std::clamp(in[k] * ratio, 0.0, 1.0));
      }
    }
  }
  return out;
}

LdrImage expose(const HdrImage& hdr, double ev) {
  LdrImage out(hdr.height(), hdr.width());
  const double gain = std::exp2(ev);
  auto src = hdr.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const double v = std::clamp(src[k] * gain, 0.0, 1.0);
    dst[k] = static_cast<float>(std::pow(v, 1.0 / 2.2));
  }
  return out;
}

CalibMask calib_mask(const LdrImage& ldr, double sigma) {
  CalibMask m{ldr.height(), ldr.width(),
              std::vector<std::uint8_t>(static_cast<std::size_t>(ldr.height()) * ldr.width())};
  const double threshold = 3.0 * sigma;
  for (int r = 0; r < ldr.height(); ++r) {
    for (int c = 0; c < ldr.width(); ++c) {
      const float* p = ldr.pixel(r, c);
      const double sum = static_cast<double>(p[0]) + p[1] + p[2];
      m.bits[static_cast<std::size_t>(r) * ldr.width() + c] = sum < threshold ? 1 : 0;
    }
  }
  return m;
}

double calibration_scale(const HdrImage& hdr, const LdrImage& ldr, const CalibMask& mask) {
  if (hdr.height() != ldr.height() || hdr.width() != ldr.width() ||
      mask.height != ldr.height() || mask.width != ldr.width()) {
    throw ShapeError("calibrate: HDR, LDR and mask dimensions differ");
  }
  double ldr_sum = 0.0;
  double hdr_sum = 0.0;
  for (int r = 0; r < hdr.height(); ++r) {
    for (int c = 0; c < hdr.width(); ++c) {
      if (!mask.at(r, c)) continue;
      for (int k = 0; k < 3; ++k) {
        ldr_sum += ldr.at(r, c, k);
        hdr_sum += hdr.at(r, c, k);
      }
    }
  }
  if (mask.count() == 0) throw CalibrationError("calibrate: mask selects no pixels");
  if (!(hdr_sum > 0.0)) throw CalibrationError("calibrate: masked HDR sum is zero");
  return ldr_sum / hdr_sum;
}

HdrImage calibrate(const HdrImage& hdr, const LdrImage& ldr, const CalibMask& mask) {
  const double kappa = calibration_scale(hdr, ldr, mask);
  HdrImage out(hdr.height(), hdr.width());
  auto src = hdr.values();
  auto dst = out.values();
  for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<float>(kappa * src[k]);
  return out;
}

HdrImage calibrate(const HdrImage& hdr, const LdrImage& ldr, double sigma) {
  return calibrate(hdr, ldr, calib_mask(ldr, sigma));
}

template <class Tag>
Image<Tag> rotate_horizontal(const Image<Tag>& img, long shift) {
  const int w = img.width();
  if (w == 0) return img;
  const long s = ((shift % w) + w) % w;
  Image<Tag> out(img.height(), w);
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < w; ++c) {
      const int dst = static_cast<int>((c + s) % w);
      std::copy_n(img.pixel(r, c), 3, out.pixel(r, dst));
    }
  }
  return out;
}

template <class Tag>
Image<Tag> resample_area(const Image<Tag>& img, int new_height, int new_width) {
  if (new_height < 1 || new_width < 1) throw DomainError("resample_area: empty target");
  if (img.empty()) throw DomainError("resample_area: empty source");
  const auto row_taps = axis_taps(img.height(), new_height);
  const auto col_taps = axis_taps(img.width(), new_width);
  // Horizontal pass into a double buffer, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(img.height()) * new_width * 3, 0.0);
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < new_width; ++c) {
      const auto& t = col_taps[c];
      double* o = &tmp[(static_cast<std::size_t>(r) * new_width + c) * 3];
      for (std::size_t k = 0; k < t.index.size(); ++k) {
        const float* p = img.pixel(r, t.index[k]);
        for (int ch = 0; ch < 3; ++ch) o[ch] += t.weight[k] * p[ch];
      }
    }
  }
  Image<Tag> out(new_height, new_width);
  for (int r = 0; r < new_height; ++r) {
    const auto& t = row_taps[r];
    for (int c = 0; c < new_width; ++c) {
      double acc[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.index.size(); ++k) {
        const double* p = &tmp[(static_cast<std::size_t>(t.index[k]) * new_width + c) * 3];
        for (int ch = 0; ch < 3; ++ch) acc[ch] += t.weight[k] * p[ch];
      }
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = static_cast<float>(acc[ch]);
    }
  }
  return out;
}

template <class Tag>
Image<Tag> crop_wrap(const Image<Tag>& img, int row, int col, int height, int width) {
  if (row < 0 || height < 0 || width < 0 || row + height > img.height() ||
      width > img.width()) {
    throw DomainError("crop_wrap: crop " + std::to_string(height) + "x" +
                      std::to_string(width) + " at row " + std::to_string(row) +
                      " exceeds " + std::to_string(img.height()) + "x" +
                      std::to_string(img.width()));
  }
  Image<Tag> out(height, width);
  const int w = img.width();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int src = ((col + c) % w + w) % w;
      std::copy_n(img.pixel(row + r, src), 3, out.pixel(r, c));
    }
  }
  return out;
}

template LdrImage rotate_horizontal(const LdrImage&, long);
template HdrImage rotate_horizontal(const HdrImage&, long);
template LdrImage resample_area(const LdrImage&, int, int);
template HdrImage resample_area(const HdrImage&, int, int);
template LdrImage crop_wrap(const LdrImage&, int, int, int, int);
template HdrImage crop_wrap(const HdrImage&, int, int, int, int);

}  // namespace t2l
