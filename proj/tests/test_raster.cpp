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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "t2l/raster.hpp"

using namespace t2l;

namespace {

HdrImage random_hdr(int h, int w, Rng& rng, double hi) {
  HdrImage img(h, w);
  for (auto& v : img.values()) v = static_cast<float>(uniform(rng, 0, hi));
  return img;
}

double max_rel_error(const HdrImage& a, const HdrImage& b) {
  double worst = 0;
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      const float* p = a.pixel(r, c);
      const double m = std::max({p[0], p[1], p[2]});
      for (int k = 0; k < 3; ++k) {
        const double err = std::abs(static_cast<double>(p[k]) - b.at(r, c, k));
        if (m > 0) worst = std::max(worst, err / m);
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("zero pixel encodes to zero bytes and back") {
  const auto e = rgbe_from_float(0, 0, 0);
  CHECK(e == std::array<std::uint8_t, 4>{0, 0, 0, 0});
  const auto d = float_from_rgbe(std::span<const std::uint8_t, 4>(e));
  CHECK(d == std::array<float, 3>{0, 0, 0});
}

TEST_CASE("unit pixel matches the reference mantissa formula") {
  const auto e = rgbe_from_float(1, 1, 1);
  // 1 = 0.5 * 2^1: mantissa 128, exponent byte 129.
  CHECK(e == std::array<std::uint8_t, 4>{128, 128, 128, 129});
  const double ref = 128.0 / 256.0 * std::ldexp(1.0, 129 - 128);
  CHECK(float_from_rgbe(std::span<const std::uint8_t, 4>(e))[0] == ref);
}

TEST_CASE("RGBE roundtrip stays within 1/256 of the pixel maximum") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto img = random_hdr(2, 4, rng, std::pow(10.0, uniform(rng, -3, 4)));
    img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 0;
    const auto back = decode_rgbe(encode_rgbe(img));
    REQUIRE(back.height() == 2);
    REQUIRE(back.width() == 4);
    CHECK(max_rel_error(img, back) <= 1.0 / 256);
    CHECK(back.at(0, 0, 0) == 0.0f);
  }
}

TEST_CASE("mantissa rounding that carries bumps the exponent") {
  const auto e = rgbe_from_float(0.9999f, 0.1f, 0.0f);
  CHECK(e[3] == 129);
  CHECK(e[0] == 128);
}

TEST_CASE("golden RLE file decodes bit-stably") {
  const std::filesystem::path dir = T2L_TEST_DATA_DIR;
  const auto img = read_hdr(dir / "golden_rle.hdr");
  std::ifstream f(dir / "golden_rle.expected.txt");
  int h = 0, w = 0;
  f >> h >> w;
  REQUIRE(img.height() == h);
  REQUIRE(img.width() == w);
  std::string tok;
  std::size_t k = 0;
  while (f >> tok) {
    const float expect = static_cast<float>(std::strtod(tok.c_str(), nullptr));
    CHECK(img.values()[k] == expect);
    ++k;
  }
  CHECK(k == img.size());
}

TEST_CASE("codec errors carry offsets") {
  const std::string bad_sig = "RADIANCE\n\n-Y 1 +X 1\n";
  CHECK_THROWS_AS(decode_rgbe(std::span(reinterpret_cast<const std::uint8_t*>(bad_sig.data()),
                                        bad_sig.size())),
                  CodecError);
  const std::string order = "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n+Y 1 +X 1\n\1\1\1\1";
  try {
    decode_rgbe(std::span(reinterpret_cast<const std::uint8_t*>(order.data()), order.size()));
    FAIL("expected an error");
  } catch (const CodecError& e) {
    CHECK(e.offset() == 35);
    CHECK(std::string(e.what()).find("pixel order") != std::string::npos);
  }
  HdrImage img(2, 3, 0.5f);
  auto bytes = encode_rgbe(img);
  bytes.resize(bytes.size() - 2);
  CHECK_THROWS_AS(decode_rgbe(bytes), CodecError);
  const std::string xyze = "#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n";
  CHECK_THROWS_AS(
      decode_rgbe(std::span(reinterpret_cast<const std::uint8_t*>(xyze.data()), xyze.size())),
      CodecError);
}

TEST_CASE("PNG roundtrip quantizes to 8 bits") {
  LdrImage img(3, 5);
  Rng rng(2);
  for (auto& v : img.values()) v = static_cast<float>(uniform01(rng));
  const auto path = std::filesystem::temp_directory_path() / "t2l_png_roundtrip.png";
  write_png(path, img);
  const auto back = read_png(path);
  REQUIRE(back.height() == 3);
  REQUIRE(back.width() == 5);
  for (std::size_t k = 0; k < img.size(); ++k) {
    CHECK(back.values()[k] == doctest::Approx(std::round(255 * img.values()[k]) / 255.0));
  }
  std::filesystem::remove(path);
}

TEST_CASE("reinhard tone mapping") {
  HdrImage zero(2, 2);
  for (float v : reinhard_tonemap(zero).values()) CHECK(v == 0.0f);

  HdrImage img(1, 2);
  for (int k = 0; k < 3; ++k) {
    img.at(0, 0, k) = 1.0f;
    img.at(0, 1, k) = 3.0f;
  }
  const auto ldr = reinhard_tonemap(img);
  const auto* a = ldr.pixel(0, 0);
  const auto* b = ldr.pixel(0, 1);
  CHECK(luminance(a[0], a[1], a[2]) == doctest::Approx(0.5));
  CHECK(luminance(b[0], b[1], b[2]) == doctest::Approx(0.75));

  Rng rng(8);
  auto big = random_hdr(8, 8, rng, 40);
  const auto out = reinhard_tonemap(big);
  for (float v : out.values()) CHECK((v >= 0.0f && v <= 1.0f));
  const auto pc = reinhard_tonemap(img, TonemapMode::kPerChannel);
  CHECK(pc.at(0, 1, 0) == doctest::Approx(0.75));
}

TEST_CASE("reinhard is monotone in luminance for gray pixels") {
  HdrImage img(1, 64);
  for (int c = 0; c < 64; ++c) {
    for (int k = 0; k < 3; ++k) img.at(0, c, k) = static_cast<float>(0.05 * c * c);
  }
  const auto ldr = reinhard_tonemap(img);
  for (int c = 1; c < 64; ++c) CHECK(ldr.at(0, c, 0) > ldr.at(0, c - 1, 0));
}

TEST_CASE("exposure preview") {
  HdrImage img(1, 3);
  img.at(0, 0, 0) = 1.0f;
  img.at(0, 1, 0) = 16.0f;
  img.at(0, 2, 0) = 32.0f;
  CHECK(expose(img, 0).at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(expose(img, -4).at(0, 1, 0) == doctest::Approx(1.0));
  CHECK(expose(img, -4).at(0, 2, 0) == doctest::Approx(1.0));
  CHECK(expose(img, -5).at(0, 1, 0) == doctest::Approx(std::pow(0.5, 1 / 2.2)));
}

TEST_CASE("calibration mask threshold") {
  LdrImage ldr(1, 3);
  for (int k = 0; k < 3; ++k) {
    ldr.at(0, 0, k) = 0.5f;
    ldr.at(0, 1, k) = 1.0f;
  }
  // Channel sum equal to 3 sigma in float arithmetic.
  ldr.at(0, 2, 0) = 0.75f;
  ldr.at(0, 2, 1) = 0.75f;
  ldr.at(0, 2, 2) = 0.75f;
  const auto m = calib_mask(ldr, 0.83);
  CHECK(m.at(0, 0));
  CHECK_FALSE(m.at(0, 1));
  CHECK_FALSE(calib_mask(ldr, 0.75).at(0, 2));
  CHECK(calib_mask(ldr, 0.7500001).at(0, 2));
}

TEST_CASE("calibration scale") {
  LdrImage ldr(2, 2);
  HdrImage hdr(2, 2);
  Rng rng(1);
  for (std::size_t k = 0; k < ldr.size(); ++k) {
    ldr.values()[k] = static_cast<float>(uniform(rng, 0.05, 0.6));
    hdr.values()[k] = ldr.values()[k];
  }
  const auto same = calibrate(hdr, ldr);
  CHECK(same == hdr);

  for (std::size_t k = 0; k < ldr.size(); ++k) hdr.values()[k] = 2 * ldr.values()[k];
  const auto mask = calib_mask(ldr);
  CHECK(calibration_scale(hdr, ldr, mask) == doctest::Approx(0.5));

  LdrImage bright(2, 2, 1.0f);
  CHECK_THROWS_AS(calibrate(hdr, bright), CalibrationError);
  CHECK_THROWS_AS(calibrate(HdrImage(2, 2), ldr), CalibrationError);
}

TEST_CASE("calibration equalizes masked sums and is idempotent") {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    auto hdr = random_hdr(6, 9, rng, uniform(rng, 0.1, 100));
    const auto ldr = reinhard_tonemap(hdr);
    const auto mask = calib_mask(ldr);
    if (mask.count() == 0) continue;
    const auto out = calibrate(hdr, ldr, mask);
    double sl = 0, so = 0;
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 9; ++c) {
        if (!mask.at(r, c)) continue;
        for (int k = 0; k < 3; ++k) {
          sl += ldr.at(r, c, k);
          so += out.at(r, c, k);
        }
      }
    }
    CHECK(std::abs(so - sl) / sl < 1e-6);
    CHECK(calibration_scale(out, ldr, mask) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("horizontal rotation") {
  Rng rng(4);
  LdrImage img(3, 8);
  for (auto& v : img.values()) v = static_cast<float>(uniform01(rng));
  CHECK(rotate_horizontal(img, 0) == img);
  CHECK(rotate_horizontal(img, 8) == img);
  CHECK(rotate_horizontal(rotate_horizontal(img, 2), 2) == rotate_horizontal(img, 4));
  for (int k = 0; k < 8; ++k) CHECK(rotate_horizontal(rotate_horizontal(img, k), 8 - k) == img);
  const auto r = rotate_horizontal(img, 3);
  CHECK(r.at(1, 3, 2) == img.at(1, 0, 2));
  CHECK(rotate_horizontal(img, -1) == rotate_horizontal(img, 7));
}

TEST_CASE("area resampling") {
  LdrImage flat(7, 13, 0.5f);
  for (auto [h, w] : {std::pair{1, 1}, {3, 5}, {14, 26}, {20, 4}}) {
    for (float v : resample_area(flat, h, w).values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
  }
  LdrImage stripes(2, 2);
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 3; ++k) stripes.at(r, 1, k) = 1.0f;
  }
  CHECK(resample_area(stripes, 1, 1).at(0, 0, 0) == doctest::Approx(0.5));

  // Box-filter oracle on a checkerboard: every 2x2 block averages to 0.5.
  LdrImage checker(4, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      for (int k = 0; k < 3; ++k) checker.at(r, c, k) = static_cast<float>((r + c) % 2);
    }
  }
  for (float v : resample_area(checker, 2, 2).values()) CHECK(v == doctest::Approx(0.5));
  CHECK(resample_area(checker, 4, 4) == checker);
  CHECK_THROWS_AS(resample_area(checker, 0, 2), DomainError);
}

TEST_CASE("wrapping crop") {
  LdrImage img(2, 4);
  for (int c = 0; c < 4; ++c) img.at(0, c, 0) = static_cast<float>(c);
  const auto cr = crop_wrap(img, 0, 3, 1, 3);
  CHECK(cr.at(0, 0, 0) == 3.0f);
  CHECK(cr.at(0, 1, 0) == 0.0f);
  CHECK(cr.at(0, 2, 0) == 1.0f);
  CHECK_THROWS_AS(crop_wrap(img, 1, 0, 2, 2), DomainError);
}
