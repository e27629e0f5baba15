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

#include "t2l/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "t2l/common.hpp"

namespace t2l::sphere {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_mod(double x, double m) {
  double r = std::fmod(x, m);
  if (r < 0) r += m;
  // fmod of a tiny negative value can round up to m itself.
  if (r >= m) r -= m;
  return r;
}

}  // namespace

double wrap_theta(double theta) {
  if (theta > -kPi && theta <= kPi) return theta;
  double r = wrap_mod(theta + kPi, 2 * kPi);  // [0, 2pi)
  double out = r - kPi;                       // [-pi, pi)
  if (out <= -kPi) out = kPi;
  return out;
}

SphereCoord fractional_pixel_to_sphere(double row, double col, long height, long width,
                                       Axes axes) {
  if (height < 1 || width < 1) throw DomainError("pixel_to_sphere: empty raster");
  if (axes == Axes::kLongitudeAlongHeight) {
    // Row carries the full turn, column the half turn.
    const double r = wrap_mod(row, static_cast<double>(height));
    const double theta = (2.0 * (r + 0.5) / static_cast<double>(height) - 1.0) * kPi;
    const double phi = (2.0 * (col + 0.5) / static_cast<double>(width) - 1.0) * kPi / 2;
    return {wrap_theta(theta), phi};
  }
  const double c = wrap_mod(col, static_cast<double>(width));
  const double theta = (2.0 * (c + 0.5) / static_cast<double>(width) - 1.0) * kPi;
  const double phi = (2.0 * (row + 0.5) / static_cast<double>(height) - 1.0) * kPi / 2;
  return {wrap_theta(theta), phi};
}

SphereCoord pixel_to_sphere(long i, long j, long height, long width, Axes axes) {
  if (height < 1 || width < 1) throw DomainError("pixel_to_sphere: empty raster");
  if (i < 0 || i >= height || j < 0 || j >= width) {
    throw DomainError("pixel_to_sphere: index (" + std::to_string(i) + ", " +
                      std::to_string(j) + ") outside " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  return fractional_pixel_to_sphere(static_cast<double>(i), static_cast<double>(j), height,
                                    width, axes);
}

PixelCoord sphere_to_pixel(SphereCoord c, long height, long width, Axes axes) {
  const double theta = wrap_theta(c.theta);
  const double phi = std::clamp(c.phi, -kPi / 2, kPi / 2);
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  if (axes == Axes::kLongitudeAlongHeight) {
    const double row = wrap_mod((theta / kPi + 1.0) * h / 2.0 - 0.5, h);
    const double col = (phi / (kPi / 2) + 1.0) * w / 2.0 - 0.5;
    return {row, col};
  }
  const double col = wrap_mod((theta / kPi + 1.0) * w / 2.0 - 0.5, w);
  const double row = (phi / (kPi / 2) + 1.0) * h / 2.0 - 0.5;
  return {row, col};
}

std::vector<double> fourier_encode(double angle, int octaves) {
  if (octaves < 1) throw DomainError("fourier_encode: octave count must be >= 1");
  std::vector<double> out;
  out.reserve(2 * static_cast<std::size_t>(octaves));
  double freq = kPi;
  for (int k = 0; k < octaves; ++k) {
    out.push_back(std::sin(freq * angle));
    out.push_back(std::cos(freq * angle));
    freq *= 2.0;
  }
  return out;
}

int spe_channels(int octaves) { return 2 + 4 * octaves; }

std::vector<double> spe_vector(SphereCoord c, int octaves) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(spe_channels(octaves)));
  v.push_back(c.theta);
  v.push_back(c.phi);
  for (double x : fourier_encode(c.theta, octaves)) v.push_back(x);
  for (double x : fourier_encode(c.phi, octaves)) v.push_back(x);
  return v;
}

SpeGrid patch_spe(const PatchGeometry& p, int token_rows, int token_cols, int octaves,
                  Axes axes) {
  if (token_rows < 1 || token_cols < 1 || p.patch_h < 1 || p.patch_w < 1) {
    throw DomainError("patch_spe: empty patch or token grid");
  }
  if (p.patch_h % token_rows != 0 || p.patch_w % token_cols != 0) {
    throw DomainError("patch_spe: token grid " + std::to_string(token_rows) + "x" +
                      std::to_string(token_cols) + " does not divide patch " +
                      std::to_string(p.patch_h) + "x" + std::to_string(p.patch_w));
  }
  if (p.patch_w > p.pano_w || p.origin_row < 0 || p.origin_row + p.patch_h > p.pano_h) {
    throw DomainError("patch_spe: patch does not fit the panorama");
  }
  SpeGrid grid;
  grid.rows = token_rows;
  grid.cols = token_cols;
  grid.octaves = octaves;
  grid.data.reserve(static_cast<std::size_t>(token_rows) * token_cols *
                    static_cast<std::size_t>(spe_channels(octaves)));
  const double cell_h = static_cast<double>(p.patch_h) / token_rows;
  const double cell_w = static_cast<double>(p.patch_w) / token_cols;
  for (int r = 0; r < token_rows; ++r) {
    for (int c = 0; c < token_cols; ++c) {
      const double row = static_cast<double>(p.origin_row) + (r + 0.5) * cell_h - 0.5;
      const double col = static_cast<double>(p.origin_col) + (c + 0.5) * cell_w - 0.5;
      const auto v =
          spe_vector(fractional_pixel_to_sphere(row, col, p.pano_h, p.pano_w, axes), octaves);
      grid.data.insert(grid.data.end(), v.begin(), v.end());
    }
  }
  return grid;
}

}  // namespace t2l::sphere
