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

// Radiance .hdr (RGBE) container. Reads flat and adaptive run-length encoded
// scanlines; writes flat scanlines.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "t2l/raster.hpp"

namespace t2l {

namespace {

constexpr std::string_view kSignature = "#?RADIANCE";

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  std::string line() {
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
    if (pos_ >= bytes_.size()) throw CodecError("rgbe: header line not terminated", start);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + start), pos_ - start);
    ++pos_;
    return s;
  }

  std::uint8_t byte(const char* what) {
    if (pos_ >= bytes_.size()) throw CodecError(std::string("rgbe: truncated ") + what, pos_);
    return bytes_[pos_++];
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CodecError(std::string("rgbe: truncated ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> peek(std::size_t n) const {
    return bytes_.subspan(pos_, std::min(n, bytes_.size() - pos_));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void read_rle_scanline(Reader& in, int width, std::vector<std::uint8_t>& scan) {
  const std::size_t start = in.offset();
  in.take(4, "scanline marker");
  // Channels are stored one after another, each run-length coded.
  for (int ch = 0; ch < 4; ++ch) {
    int x = 0;
    while (x < width) {
      const int count = in.byte("scanline run");
      if (count > 128) {
        const int run = count - 128;
        if (x + run > width) throw CodecError("rgbe: run overflows scanline", start);
        const std::uint8_t v = in.byte("scanline run value");
        for (int k = 0; k < run; ++k) scan[static_cast<std::size_t>(x++) * 4 + ch] = v;
      } else {
        if (count == 0 || x + count > width) {
          throw CodecError("rgbe: bad literal count in scanline", in.offset() - 1);
        }
        auto lit = in.take(static_cast<std::size_t>(count), "scanline literal");
        for (int k = 0; k < count; ++k) scan[static_cast<std::size_t>(x++) * 4 + ch] = lit[k];
      }
    }
  }
}

}  // namespace

std::array<std::uint8_t, 4> rgbe_from_float(float r, float g, float b) {
  const double v = std::max({static_cast<double>(r), static_cast<double>(g),
                             static_cast<double>(b)});
  if (!(v > 1e-32)) return {0, 0, 0, 0};
  int e = 0;
  std::frexp(v, &e);
  auto quantize = [&](double x, int exp) {
    return std::lround(std::ldexp(std::max(x, 0.0), 8 - exp));
  };
  // Rounding the largest mantissa may carry to 256; bump the exponent then.
  if (quantize(v, e) > 255) ++e;
  const auto q = [&](float x) {
    return static_cast<std::uint8_t>(std::min<long>(255, quantize(x, e)));
  };
  return {q(r), q(g), q(b), static_cast<std::uint8_t>(e + 128)};
}

std::array<float, 3> float_from_rgbe(std::span<const std::uint8_t, 4> p) {
  if (p[3] == 0) return {0.0f, 0.0f, 0.0f};
  const double f = std::ldexp(1.0, static_cast<int>(p[3]) - (128 + 8));
  return {static_cast<float>(p[0] * f), static_cast<float>(p[1] * f),
          static_cast<float>(p[2] * f)};
}

std::vector<std::uint8_t> encode_rgbe(const HdrImage& img) {
  const std::string header = std::string(kSignature) + "\nFORMAT=32-bit_rle_rgbe\n\n-Y " +
                             std::to_string(img.height()) + " +X " +
                             std::to_string(img.width()) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.size() / 3 * 4);
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const float* p = img.pixel(r, c);
      const auto e = rgbe_from_float(p[0], p[1], p[2]);
      out.insert(out.end(), e.begin(), e.end());
    }
  }
  return out;
}

HdrImage decode_rgbe(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const std::string first = in.line();
  if (first.rfind("#?", 0) != 0) throw CodecError("rgbe: missing #? signature", 0);
  while (true) {
    const std::size_t at = in.offset();
    const std::string l = in.line();
    if (l.empty()) break;
    if (l.rfind("FORMAT=", 0) == 0 && l != "FORMAT=32-bit_rle_rgbe") {
      throw CodecError("rgbe: unsupported " + l, at);
    }
  }
  const std::size_t res_at = in.offset();
  const std::string res = in.line();
  char ya[3] = {}, xa[3] = {};
  int h = 0, w = 0;
  if (std::sscanf(res.c_str(), "%2s %d %2s %d", ya, &h, xa, &w) != 4) {
    throw CodecError("rgbe: malformed resolution line '" + res + "'", res_at);
  }
  if (std::strcmp(ya, "-Y") != 0 || std::strcmp(xa, "+X") != 0) {
    throw CodecError("rgbe: unsupported pixel order '" + res + "'", res_at);
  }
  if (h < 0 || w < 0) throw CodecError("rgbe: negative resolution", res_at);

  HdrImage img(h, w);
  std::vector<std::uint8_t> scan(static_cast<std::size_t>(w) * 4);
  for (int r = 0; r < h; ++r) {
    const auto head = in.peek(4);
    const bool rle = w >= 8 && w < 0x8000 && head.size() == 4 && head[0] == 2 &&
                     head[1] == 2 && ((head[2] << 8) | head[3]) == w && (head[2] & 0x80) == 0;
    if (rle) {
      read_rle_scanline(in, w, scan);
    } else {
      auto flat = in.take(scan.size(), "flat scanline");
      std::copy(flat.begin(), flat.end(), scan.begin());
    }
    for (int c = 0; c < w; ++c) {
      const auto v = float_from_rgbe(std::span<const std::uint8_t, 4>(&scan[c * 4ull], 4));
      std::copy(v.begin(), v.end(), img.pixel(r, c));
    }
  }
  return img;
}

void write_hdr(const std::filesystem::path& path, const HdrImage& img) {
  const auto bytes = encode_rgbe(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

HdrImage read_hdr(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_rgbe(bytes);
}

}  // namespace t2l
