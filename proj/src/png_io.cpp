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

#include <png.h>

#include <cmath>
#include <memory>

#include "t2l/raster.hpp"

namespace t2l {

namespace {

std::vector<std::uint8_t> quantize8(const LdrImage& img) {
  std::vector<std::uint8_t> px(img.size());
  auto v = img.values();
  for (std::size_t k = 0; k < px.size(); ++k) {
    const double x = std::clamp(static_cast<double>(v[k]), 0.0, 1.0);
    px[k] = static_cast<std::uint8_t>(std::lround(255.0 * x));
  }
  return px;
}

png_image make_header(const LdrImage& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = PNG_FORMAT_RGB;
  return pi;
}

}  // namespace

void write_png(const std::filesystem::path& path, const LdrImage& img) {
  const auto px = quantize8(img);
  png_image pi = make_header(img);
  if (!png_image_write_to_file(&pi, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw IoError("png write failed for " + path.string() + ": " + pi.message);
  }
}

std::vector<std::uint8_t> encode_png(const LdrImage& img) {
  const auto px = quantize8(img);
  png_image pi = make_header(img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + pi.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, px.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + pi.message);
  }
  out.resize(size);
  return out;
}

LdrImage read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw IoError("png read failed for " + path.string() + ": " + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError("png decode failed for " + path.string() + ": " + pi.message);
  }
  LdrImage img(static_cast<int>(pi.height), static_cast<int>(pi.width));
  auto v = img.values();
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(px[k] / 255.0);
  return img;
}

}  // namespace t2l
