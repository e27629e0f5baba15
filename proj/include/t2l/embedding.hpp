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

// Joint text-image embedding stand-ins, pseudo text features, exact cosine
// KNN and the T2LEMB1 embedding store.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t2l/common.hpp"
#include "t2l/raster.hpp"

namespace t2l::embedding {

using Vector = std::vector<float>;

inline constexpr int kToyDim = 64;
inline constexpr double kDefaultAlpha = 0.25;
inline constexpr int kDefaultK = 5;

double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
double cosine(std::span<const float> a, std::span<const float> b);
/// Scales to unit L2 norm; a zero vector is a DomainError.
void normalize(std::span<float> v);

/// Lowercased alphanumeric words of `text`.
std::vector<std::string> tokenize(std::string_view text);

/// Sum of per-word pseudo-random unit vectors seeded by a stable hash of the
/// word, normalized. Not a language model: only identical words agree.
Vector toy_text_embed(std::string_view text, int dim = kToyDim);

/// 4x8 cell mean colors plus an 8-bin luminance histogram, centered and
/// projected by a fixed seeded Gaussian matrix, normalized.
Vector toy_image_embed(const LdrImage& img, int dim = kToyDim);

/// (1 - alpha) v + alpha * noise * |v| / |noise|, renormalized to unit norm.
Vector pseudo_text_feature(std::span<const float> v, double alpha, std::span<const double> noise);
/// Same with standard Gaussian noise drawn from `rng` (redrawn if all zero).
Vector pseudo_text_feature(std::span<const float> v, double alpha, Rng& rng);

struct Neighbor {
  std::size_t index;
  double similarity;
};

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(int dim) : dim_(dim) {}

  /// Keys must be unique and vectors must match the store dimension (the
  /// first insertion fixes it when the store was built without one).
  void add(std::string key, Vector v);
  std::size_t size() const { return keys_.size(); }
  int dim() const { return dim_; }
  const std::string& key(std::size_t i) const { return keys_[i]; }
  std::span<const float> vector(std::size_t i) const;
  /// Index of `key`, or size() when absent.
  std::size_t find(std::string_view key) const;

  /// Exact top-k by cosine similarity, descending; equal similarities keep
  /// insertion order.
  std::vector<Neighbor> knn(std::span<const float> query, int k) const;

 private:
  int dim_ = 0;
  std::vector<std::string> keys_;
  std::vector<float> data_;
};

/// [K nearest image embeddings..., text slot]. The text slot is last.
struct ConditionBundle {
  std::vector<Vector> vectors;
  int knn_count = 0;
  std::size_t size() const { return vectors.size(); }
};

/// K = 0 gives a bundle holding only the text slot.
ConditionBundle knn_condition(std::span<const float> query, const EmbeddingStore& store, int k,
                              std::span<const float> text_slot);
inline ConditionBundle knn_condition(std::span<const float> query, const EmbeddingStore& store,
                                     int k) {
  return knn_condition(query, store, k, query);
}

/// "T2LEMB1", u32 count, u32 dim, then per record: u16 key length, key bytes,
/// dim little-endian f32 values.
std::vector<std::uint8_t> encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::span<const std::uint8_t> bytes);
void save_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_store(const std::filesystem::path& path);

}  // namespace t2l::embedding
