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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "t2l/sphere.hpp"
#include "t2l/common.hpp"

using namespace t2l;
using namespace t2l::sphere;
constexpr double kPi = std::numbers::pi;

TEST_CASE("raster center maps to the origin of the sphere") {
  // Between the two central pixel centers of an even raster.
  const auto c = fractional_pixel_to_sphere(63.5, 127.5, 128, 256);
  CHECK(c.theta == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(c.phi == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("top-left pixel of a 2x2 raster") {
  const auto c = pixel_to_sphere(0, 0, 2, 2);
  CHECK(c.theta == doctest::Approx(-kPi / 2));
  CHECK(c.phi == doctest::Approx(-kPi / 4));
  const auto p = sphere_to_pixel(c, 2, 2);
  CHECK(p.row == doctest::Approx(0.0));
  CHECK(p.col == doctest::Approx(0.0));
}

TEST_CASE("bottom-right pixel approaches the seam and the pole") {
  const auto small = pixel_to_sphere(9, 9, 10, 10);
  const auto big = pixel_to_sphere(9999, 9999, 10000, 10000);
  CHECK(kPi - big.theta < kPi - small.theta);
  CHECK(kPi / 2 - big.phi < 1e-3);
  CHECK(kPi - big.theta < 1e-3);
}

TEST_CASE("out-of-range pixel indices are a domain error") {
  CHECK_THROWS_AS(pixel_to_sphere(-1, 0, 4, 8), DomainError);
  CHECK_THROWS_AS(pixel_to_sphere(0, 8, 4, 8), DomainError);
  CHECK_THROWS_AS(pixel_to_sphere(0, 0, 0, 8), DomainError);
}

TEST_CASE("random sphere coordinates roundtrip through pixels") {
  Rng rng(11);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const SphereCoord c{uniform(rng, -kPi, kPi), uniform(rng, -kPi / 2, kPi / 2)};
    const auto p = sphere_to_pixel(c, 97, 203);
    const auto back = fractional_pixel_to_sphere(p.row, p.col, 97, 203);
    worst = std::max({worst, std::abs(wrap_theta(back.theta - c.theta)),
                      std::abs(back.phi - c.phi)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("theta beyond pi wraps before mapping") {
  const auto a = sphere_to_pixel({kPi + 0.1, 0.2}, 64, 128);
  const auto b = sphere_to_pixel({-kPi + 0.1, 0.2}, 64, 128);
  CHECK(a.col == doctest::Approx(b.col).epsilon(1e-12));
  CHECK(a.row == doctest::Approx(b.row));
  CHECK(wrap_theta(kPi + 0.1) == doctest::Approx(-kPi + 0.1));
  CHECK(wrap_theta(kPi) == kPi);
}

TEST_CASE("horizontal wrap of fractional columns") {
  const auto a = fractional_pixel_to_sphere(3, 5, 16, 32);
  const auto b = fractional_pixel_to_sphere(3, 5 + 32, 16, 32);
  CHECK(a.theta == doctest::Approx(b.theta).epsilon(1e-12));
}

TEST_CASE("fourier encoding") {
  const auto zero = fourier_encode(0.0, 4);
  const std::vector<double> expect{0, 1, 0, 1, 0, 1, 0, 1};
  CHECK(zero == expect);

  const auto one = fourier_encode(1.0, 1);
  CHECK(one[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(one[0]) < 1e-12);
  CHECK(one[1] == doctest::Approx(-1.0));

  // Independent scalar evaluation.
  const double a = 0.37;
  const auto enc = fourier_encode(a, 4);
  for (int k = 0; k < 4; ++k) {
    const double f = std::pow(2.0, k) * kPi * a;
    CHECK(enc[2 * k] == doctest::Approx(std::sin(f)).epsilon(1e-14));
    CHECK(enc[2 * k + 1] == doctest::Approx(std::cos(f)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(fourier_encode(0.3, 0), DomainError);
}

TEST_CASE("fourier encoding is 2-periodic") {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const double a = uniform(rng, -4, 4);
    const auto x = fourier_encode(a, 4);
    const auto y = fourier_encode(a + 2.0, 4);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) < 1e-12);
  }
}

TEST_CASE("patch encoding over the whole panorama with one token") {
  const auto g = patch_spe({0, 0, 64, 128, 64, 128}, 1, 1);
  REQUIRE(g.channels() == 18);
  const auto v = g.at(0, 0);
  CHECK(std::abs(v[0]) < 1e-15);
  CHECK(std::abs(v[1]) < 1e-15);
  const auto ref = fourier_encode(0.0, 4);
  for (int k = 0; k < 8; ++k) {
    CHECK(v[2 + k] == doctest::Approx(ref[k]));
    CHECK(v[10 + k] == doctest::Approx(ref[k]));
  }
}

TEST_CASE("patch encoding shape and separability") {
  const auto g = patch_spe({32, 48, 64, 64, 128, 256}, 4, 4);
  CHECK(g.rows == 4);
  CHECK(g.cols == 4);
  CHECK(g.data.size() == 16u * 18u);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      for (int k = 2; k < 18; ++k) CHECK(std::abs(g.at(r, c)[k]) <= 1.0);
    }
  }
  // Same rows, shifted columns: phi channels agree, theta channels differ.
  const auto h = patch_spe({32, 112, 64, 64, 128, 256}, 4, 4);
  for (int r = 0; r < 4; ++r) {
    const auto a = g.at(r, 1);
    const auto b = h.at(r, 1);
    CHECK(a[1] == b[1]);
    for (int k = 10; k < 18; ++k) CHECK(a[k] == b[k]);
    CHECK(a[0] != b[0]);
  }
}

TEST_CASE("patch encoding wraps across the seam and validates the token grid") {
  const auto g = patch_spe({0, 240, 16, 32, 64, 256}, 1, 2);
  // Second cell is centered on column 263 == 7 after the wrap.
  const auto expect = spe_vector(fractional_pixel_to_sphere(7.5, 263.5 - 256, 64, 256));
  for (int k = 0; k < 18; ++k) CHECK(g.at(0, 1)[k] == doctest::Approx(expect[k]));
  CHECK_THROWS_AS(patch_spe({0, 0, 64, 64, 128, 256}, 3, 4), DomainError);
}

TEST_CASE("literal axis reading swaps the roles of rows and columns") {
  const auto c = pixel_to_sphere(0, 0, 2, 2, Axes::kLongitudeAlongHeight);
  CHECK(c.theta == doctest::Approx(-kPi / 2));
  CHECK(c.phi == doctest::Approx(-kPi / 4));
  const auto d = pixel_to_sphere(1, 0, 4, 2, Axes::kLongitudeAlongHeight);
  CHECK(d.theta == doctest::Approx(-kPi / 4));
  const auto p = sphere_to_pixel(d, 4, 2, Axes::kLongitudeAlongHeight);
  CHECK(p.row == doctest::Approx(1.0));
  CHECK(p.col == doctest::Approx(0.0));
}
