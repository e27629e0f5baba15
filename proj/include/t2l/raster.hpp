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

#pragma once

// LDR/HDR rasters and the pixel operations the pipeline needs: Radiance RGBE
// and PNG containers, Reinhard tone mapping, exposure previews, luminance
// calibration, resampling and horizontal rotation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "t2l/common.hpp"

namespace t2l {

struct LdrTag {};
struct HdrTag {};

/// Row-major height x width x 3 raster of floats. The tag separates display
/// values in [0, 1] (LdrImage) from linear radiance in [0, inf) (HdrImage).
template <class Tag>
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width * 3, fill) {
    if (height < 0 || width < 0) throw DomainError("Image: negative extent");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int r, int c, int ch) { return data_[index(r, c, ch)]; }
  float at(int r, int c, int ch) const { return data_[index(r, c, ch)]; }
  float* pixel(int r, int c) { return data_.data() + index(r, c, 0); }
  const float* pixel(int r, int c) const { return data_.data() + index(r, c, 0); }

  std::span<float> values() & { return data_; }
  std::span<const float> values() const& { return data_; }
  // Rvalues hand over their storage so range-for over a temporary is safe.
  std::vector<float> values() && { return std::move(data_); }

  /// Reinterprets the same values under another tag.
  template <class Other>
  Image<Other> retag() const {
    Image<Other> out(height_, width_);
    std::copy(data_.begin(), data_.end(), out.values().begin());
    return out;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * width_ + c) * 3 + ch;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

using LdrImage = Image<LdrTag>;
using HdrImage = Image<HdrTag>;

/// Throws DomainError unless every value is finite and in [0, 1].
void validate(const LdrImage& img);
/// Throws DomainError unless every value is finite and >= 0.
void validate(const HdrImage& img);

/// Binary mask over pixels; 1 marks pixels that take part in calibration.
struct CalibMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  bool at(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
  std::size_t count() const;
};

// --- Radiance RGBE ----------------------------------------------------------

/// Shared-exponent encoding of one pixel. Mantissas are rounded, so every
/// component is reproduced within 1/256 of the pixel's largest component.
std::array<std::uint8_t, 4> rgbe_from_float(float r, float g, float b);
std::array<float, 3> float_from_rgbe(std::span<const std::uint8_t, 4> rgbe);

std::vector<std::uint8_t> encode_rgbe(const HdrImage& img);
HdrImage decode_rgbe(std::span<const std::uint8_t> bytes);

void write_hdr(const std::filesystem::path& path, const HdrImage& img);
HdrImage read_hdr(const std::filesystem::path& path);

// --- PNG --------------------------------------------------------------------

/// 8-bit RGB, quantized as round(255 v).
void write_png(const std::filesystem::path& path, const LdrImage& img);
LdrImage read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const LdrImage& img);

// --- tone mapping and calibration ------------------------------------------

enum class TonemapMode { kLuminance, kPerChannel };

double luminance(float r, float g, float b);

/// Global Reinhard operator Y / (1 + Y), applied to luminance (default) or
/// to each channel independently.
LdrImage reinhard_tonemap(const HdrImage& hdr, TonemapMode mode = TonemapMode::kLuminance);

/// clamp(hdr * 2^ev, 0, 1) followed by display gamma 1/2.2.
LdrImage expose(const HdrImage& hdr, double ev);

inline constexpr double kDefaultCalibSigma = 0.83;

/// M(i,j) = 1 iff the channel sum of the LDR pixel is strictly below 3 sigma.
CalibMask calib_mask(const LdrImage& ldr, double sigma = kDefaultCalibSigma);

/// kappa = sum(M * ldr) / sum(M * hdr). Throws CalibrationError when the
/// mask is empty or the masked HDR sum is not positive.
double calibration_scale(const HdrImage& hdr, const LdrImage& ldr, const CalibMask& mask);

/// Returns kappa * hdr, where kappa equalizes the masked sums of HDR and LDR.
HdrImage calibrate(const HdrImage& hdr, const LdrImage& ldr,
                   double sigma = kDefaultCalibSigma);

/// Same, with an explicit mask.
HdrImage calibrate(const HdrImage& hdr, const LdrImage& ldr, const CalibMask& mask);

// --- geometry ----------------------------------------------------------------

/// Circular shift: output column (j + shift) mod W holds input column j.
template <class Tag>
Image<Tag> rotate_horizontal(const Image<Tag>& img, long shift);

/// Box-filter average when shrinking an axis, bilinear when enlarging it;
/// applied separably.
template <class Tag>
Image<Tag> resample_area(const Image<Tag>& img, int new_height, int new_width);

/// Crop with horizontal wrap-around; rows must lie inside the image.
template <class Tag>
Image<Tag> crop_wrap(const Image<Tag>& img, int row, int col, int height, int width);

}  // namespace t2l
