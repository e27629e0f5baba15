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

// Spherical geometry of equirectangular panoramas and Fourier positional
// encoding of (theta, phi).
//
// Longitude theta runs along the width, latitude phi along the height, with
// samples taken at pixel centers:
//   theta = (2 (j + 0.5) / W - 1) pi,   phi = (2 (i + 0.5) / H - 1) pi / 2.
// Row 0 is therefore the top of the panorama (phi near -pi/2).

#include <cstddef>
#include <span>
#include <vector>

namespace t2l::sphere {

/// Which image axis carries the full turn. kLongitudeAlongHeight binds theta to the
/// row index and phi to the column index (the transposed reading of the
/// mapping, kept for comparison); everything else uses kStandard.
enum class Axes { kStandard, kLongitudeAlongHeight };

struct SphereCoord {
  double theta = 0.0;  ///< longitude, (-pi, pi]
  double phi = 0.0;    ///< latitude, (-pi/2, pi/2]
};

struct PixelCoord {
  double row = 0.0;  ///< fractional; integers are pixel centers
  double col = 0.0;  ///< fractional, wrapped into [0, W)
};

/// Wraps an angle into (-pi, pi].
double wrap_theta(double theta);

SphereCoord pixel_to_sphere(long i, long j, long height, long width,
                            Axes axes = Axes::kStandard);

/// Same mapping at a fractional pixel position (integers are centers).
/// The column wraps horizontally; the row is not range checked.
SphereCoord fractional_pixel_to_sphere(double row, double col, long height, long width,
                                       Axes axes = Axes::kStandard);

/// Exact inverse of pixel_to_sphere. theta is wrapped and phi clamped into
/// range first; the column is returned modulo W.
PixelCoord sphere_to_pixel(SphereCoord c, long height, long width,
                           Axes axes = Axes::kStandard);

/// [sin(2^0 pi a), cos(2^0 pi a), ..., sin(2^{L-1} pi a), cos(2^{L-1} pi a)]
std::vector<double> fourier_encode(double angle, int octaves = 4);

/// Per-position encoding [theta, phi, gamma(theta), gamma(phi)], 2 + 4L
/// channels, stored position-major.
struct SpeGrid {
  int rows = 0;
  int cols = 0;
  int octaves = 4;
  std::vector<double> data;

  int channels() const { return 2 + 4 * octaves; }
  std::span<const double> at(int r, int c) const {
    const auto ch = static_cast<std::size_t>(channels());
    return {data.data() + (static_cast<std::size_t>(r) * cols + c) * ch, ch};
  }
};

int spe_channels(int octaves);

/// Encoding of a single coordinate in SpeGrid channel layout.
std::vector<double> spe_vector(SphereCoord c, int octaves = 4);

struct PatchGeometry {
  long origin_row = 0;
  long origin_col = 0;  ///< may exceed the width; wraps
  long patch_h = 0;
  long patch_w = 0;
  long pano_h = 0;
  long pano_w = 0;
};

/// One encoding vector per token cell of a patch, evaluated at the cell's
/// center pixel. Throws DomainError unless the token grid divides the patch.
SpeGrid patch_spe(const PatchGeometry& patch, int token_rows, int token_cols,
                  int octaves = 4, Axes axes = Axes::kStandard);

}  // namespace t2l::sphere
