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

#include "t2l/embedding.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numeric>

namespace t2l::embedding {

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("embedding: dims " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const float> a, std::span<const float> b) {
  const double d = norm(a) * norm(b);
  if (d == 0) throw DomainError("cosine of a zero vector");
  return dot(a, b) / d;
}

void normalize(std::span<float> v) {
  const double n = norm(v);
  if (n == 0 || !std::isfinite(n)) throw DomainError("cannot normalize a zero vector");
  for (auto& x : v) x = static_cast<float>(x / n);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vector toy_text_embed(std::string_view text, int dim) {
  if (dim < 1) throw DomainError("embedding dim must be positive");
  const auto words = tokenize(text);
  if (words.empty()) throw DomainError("toy_text_embed: empty text");
  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  for (const auto& w : words) {
    Rng rng(fnv1a64(w));
    std::vector<double> g(static_cast<std::size_t>(dim));
    double n2 = 0;
    for (auto& x : g) {
      x = standard_normal(rng);
      n2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (int k = 0; k < dim; ++k) acc[k] += g[k] * inv;
  }
  Vector v(acc.begin(), acc.end());
  normalize(v);
  return v;
}

namespace {

constexpr int kCellRows = 4;
constexpr int kCellCols = 8;
constexpr int kHistBins = 8;
constexpr int kFeatures = kCellRows * kCellCols * 3 + kHistBins;
constexpr std::uint64_t kProjectionSeed = 0x7432'6c45'6d62'0001ULL;

}  // namespace

Vector toy_image_embed(const LdrImage& img, int dim) {
  if (dim < 1) throw DomainError("embedding dim must be positive");
  if (img.height() < 1 || img.width() < 1) throw DomainError("toy_image_embed: empty image");
  std::array<double, kFeatures> f{};
  std::array<int, kCellRows * kCellCols> count{};
  for (int r = 0; r < img.height(); ++r) {
    const int cr = r * kCellRows / img.height();
    for (int c = 0; c < img.width(); ++c) {
      const int cc = c * kCellCols / img.width();
      const int cell = cr * kCellCols + cc;
      const float* px = img.pixel(r, c);
      for (int k = 0; k < 3; ++k) f[cell * 3 + k] += px[k];
      ++count[cell];
      const double y = 0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2];
      const int bin = std::clamp(static_cast<int>(y * kHistBins), 0, kHistBins - 1);
      f[kCellRows * kCellCols * 3 + bin] += 1;
    }
  }
  // Cells hold mean colors around mid-gray; the histogram holds fractions
  // around the uniform share.
  for (int cell = 0; cell < kCellRows * kCellCols; ++cell) {
    for (int k = 0; k < 3; ++k) {
      auto& x = f[cell * 3 + k];
      x = count[cell] ? x / count[cell] - 0.5 : 0.0;
    }
  }
  const double pixels = static_cast<double>(img.height()) * img.width();
  for (int b = 0; b < kHistBins; ++b) {
    auto& x = f[kCellRows * kCellCols * 3 + b];
    x = x / pixels - 1.0 / kHistBins;
  }
  Rng rng(kProjectionSeed);
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (int o = 0; o < dim; ++o) {
    for (int i = 0; i < kFeatures; ++i) out[o] += standard_normal(rng) * f[i];
  }
  Vector v(out.begin(), out.end());
  if (norm(v) == 0) v[0] = 1;  // exactly mid-gray, uniform histogram
  normalize(v);
  return v;
}

Vector pseudo_text_feature(std::span<const float> v, double alpha, std::span<const double> noise) {
  if (!(alpha >= 0 && alpha < 1)) throw DomainError("pseudo_text_feature: alpha outside [0,1)");
  if (noise.size() != v.size()) throw ShapeError("pseudo_text_feature: noise dim mismatch");
  double en = 0;
  for (double e : noise) en += e * e;
  en = std::sqrt(en);
  if (en == 0) throw DomainError("pseudo_text_feature: zero noise vector");
  const double scale = alpha * norm(v) / en;
  Vector out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    out[k] = static_cast<float>((1 - alpha) * v[k] + scale * noise[k]);
  }
  normalize(out);
  return out;
}

Vector pseudo_text_feature(std::span<const float> v, double alpha, Rng& rng) {
  std::vector<double> noise(v.size());
  bool nonzero = false;
  while (!nonzero) {
    for (auto& e : noise) nonzero |= (e = standard_normal(rng)) != 0;
  }
  return pseudo_text_feature(v, alpha, noise);
}

void EmbeddingStore::add(std::string key, Vector v) {
  if (dim_ == 0) dim_ = static_cast<int>(v.size());
  if (static_cast<int>(v.size()) != dim_ || v.empty()) {
    throw ShapeError("EmbeddingStore: vector of dim " + std::to_string(v.size()) +
                     " in a store of dim " + std::to_string(dim_));
  }
  if (key.size() > 0xffff) throw DomainError("EmbeddingStore: key longer than 65535 bytes");
  if (find(key) != size()) throw DomainError("EmbeddingStore: duplicate key '" + key + "'");
  keys_.push_back(std::move(key));
  data_.insert(data_.end(), v.begin(), v.end());
}

std::span<const float> EmbeddingStore::vector(std::size_t i) const {
  return {data_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
}

std::size_t EmbeddingStore::find(std::string_view key) const {
  return static_cast<std::size_t>(std::find(keys_.begin(), keys_.end(), key) - keys_.begin());
}

std::vector<Neighbor> EmbeddingStore::knn(std::span<const float> query, int k) const {
  if (k < 0 || static_cast<std::size_t>(k) > size()) {
    throw DomainError("knn: K=" + std::to_string(k) + " but the store holds " +
                      std::to_string(size()) + " entries");
  }
  std::vector<Neighbor> all(size());
  for (std::size_t i = 0; i < size(); ++i) all[i] = {i, cosine(query, vector(i))};
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

ConditionBundle knn_condition(std::span<const float> query, const EmbeddingStore& store, int k,
                              std::span<const float> text_slot) {
  ConditionBundle b;
  for (const auto& n : store.knn(query, k)) {
    const auto v = store.vector(n.index);
    b.vectors.emplace_back(v.begin(), v.end());
  }
  b.knn_count = k;
  b.vectors.emplace_back(text_slot.begin(), text_slot.end());
  return b;
}

// --- T2LEMB1 -------------------------------------------------------------------

namespace {

constexpr char kMagic[7] = {'T', '2', 'L', 'E', 'M', 'B', '1'};

void put_le(std::vector<std::uint8_t>& out, std::uint32_t v, int bytes) {
  for (int k = 0; k < bytes; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_le(std::span<const std::uint8_t> b, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint32_t>(b[pos + k]) << (8 * k);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_store(const EmbeddingStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, static_cast<std::uint32_t>(store.size()), 4);
  put_le(out, static_cast<std::uint32_t>(store.dim()), 4);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& key = store.key(i);
    put_le(out, static_cast<std::uint32_t>(key.size()), 2);
    out.insert(out.end(), key.begin(), key.end());
    for (float f : store.vector(i)) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_le(out, bits, 4);
    }
  }
  return out;
}

EmbeddingStore decode_store(std::span<const std::uint8_t> b) {
  constexpr std::size_t kHeader = sizeof kMagic + 8;
  if (b.size() < sizeof kMagic || std::memcmp(b.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError("embedding store: bad magic", 0);
  }
  if (b.size() < kHeader) throw ParseError("embedding store: truncated header", b.size());
  const std::uint32_t count = get_le(b, 7, 4);
  const std::uint32_t dim = get_le(b, 11, 4);
  if (dim == 0 && count > 0) throw ParseError("embedding store: zero dim with records", 11);
  EmbeddingStore store(static_cast<int>(dim));
  std::size_t pos = kHeader;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::string rec = "embedding store: record " + std::to_string(r);
    if (b.size() - pos < 2) throw ParseError(rec + " truncated in key length", pos);
    const std::size_t klen = get_le(b, pos, 2);
    pos += 2;
    if (b.size() - pos < klen) throw ParseError(rec + " truncated in key", pos);
    std::string key(reinterpret_cast<const char*>(b.data() + pos), klen);
    pos += klen;
    if ((b.size() - pos) / 4 < dim) throw ParseError(rec + " truncated in vector", pos);
    Vector v(dim);
    for (auto& f : v) {
      const std::uint32_t bits = get_le(b, pos, 4);
      std::memcpy(&f, &bits, 4);
      pos += 4;
    }
    if (store.find(key) != store.size()) throw ParseError(rec + " repeats key '" + key + "'", pos);
    store.add(std::move(key), std::move(v));
  }
  if (pos != b.size()) {
    throw ParseError("embedding store: " + std::to_string(b.size() - pos) +
                     " bytes past the last record; count or dim disagree with the data", pos);
  }
  return store;
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  write_file_bytes(path, encode_store(store));
}

EmbeddingStore load_store(const std::filesystem::path& path) {
  return decode_store(read_file_bytes(path));
}

}  // namespace t2l::embedding
