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

// Training-corpus construction: procedural panoramas with analytic HDR,
// LDR/HDR pair extraction, rotation augmentation, scene-level splits, the
// corpus directory layout and the pair archive.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "t2l/common.hpp"
#include "t2l/raster.hpp"
#include "t2l/sphere.hpp"

namespace t2l::data {

enum class SceneClass { kSkyGradient, kSunDisk, kInteriorLamp, kCheckerGround };
inline constexpr std::array<SceneClass, 4> kAllClasses{
    SceneClass::kSkyGradient, SceneClass::kSunDisk, SceneClass::kInteriorLamp,
    SceneClass::kCheckerGround};

std::string_view class_name(SceneClass c);
SceneClass parse_class(std::string_view name);

using Rgb = std::array<float, 3>;

struct SceneSpec {
  SceneClass cls = SceneClass::kSkyGradient;
  Rgb zenith{0.25f, 0.45f, 0.85f};
  Rgb horizon{0.75f, 0.85f, 0.95f};
  Rgb ground{0.35f, 0.30f, 0.25f};
  Rgb ground_alt{0.85f, 0.85f, 0.80f};  // second checker color
  // Emitter (sun or lamp): direction as longitude / elevation in radians.
  double emitter_theta = 0.0;
  double emitter_elevation = 0.8;
  double emitter_radius = 0.12;    // angular radius
  double emitter_radiance = 0.0;   // > 1 for classes with an emitter
  int checker_cells = 16;          // cells around the horizon
  std::string tag;                 // text describing the class

  bool has_emitter() const { return emitter_radiance > 0; }
};

/// Default text tag of a class.
std::string_view class_tag(SceneClass c);

/// Parameters drawn from the documented per-class ranges.
SceneSpec random_scene(SceneClass c, Rng& rng);

/// Analytic radiance sampled at pixel centers (emitters supersampled 4x4 for
/// antialiased edges). H:W must be 1:2.
HdrImage synth_pano(const SceneSpec& spec, int height, int width);

struct PairConfig {
  int base = 32;  // LR patch side
  double beta_min = 1.0;
  double beta_max = 4.0;
  double sigma = kDefaultCalibSigma;
  TonemapMode tonemap = TonemapMode::kLuminance;
};

/// A tone-mapped panorama and its calibrated HDR counterpart.
struct PreparedPano {
  LdrImage ldr;
  HdrImage hdr;  // calibrated
};
/// Tone mapping then calibration, once per panorama. Throws
/// CalibrationError when the mask is empty.
PreparedPano prepare_pano(const HdrImage& hdr, const PairConfig& cfg);

struct ScenePair {
  LdrImage ldr_lr;  // base x base
  double beta = 1;
  int crop = 0;  // side of the HR crop, round(base * beta)
  int origin_row = 0;
  int origin_col = 0;
  int pano_height = 0;
  int pano_width = 0;
  std::vector<sphere::SphereCoord> coords;  // per sample
  std::vector<float> hdr;                   // per sample RGB, calibrated
  std::vector<float> ldr;                   // per sample RGB, tone mapped
  std::string source;

  std::size_t samples() const { return coords.size(); }
  sphere::PatchGeometry geometry() const {
    return {origin_row, origin_col, crop, crop, pano_height, pano_width};
  }
};

/// `count` pairs from one prepared panorama; base^2 samples each, drawn
/// without replacement from the crop. `beta` < 0 draws it per pair.
std::vector<ScenePair> build_pairs(const PreparedPano& pano, int count, Rng& rng,
                                   const PairConfig& cfg, std::string_view source,
                                   double beta = -1);

struct Rotation {
  int shift = 0;
  int index = 0;  // 1..copies
};
/// Evenly spaced shifts round(k W / copies), k = 1..copies; the identity
/// shift is dropped.
std::vector<Rotation> rotation_shifts(int width, int copies = 10);
template <class Tag>
std::vector<Image<Tag>> augment_rotations(const Image<Tag>& pano, int copies = 10) {
  std::vector<Image<Tag>> out;
  for (const auto& r : rotation_shifts(pano.width(), copies)) {
    out.push_back(rotate_horizontal(pano, r.shift));
  }
  return out;
}

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};
/// Scene-level split: round(train_frac * n) ids go to train.
Split make_split(std::span<const std::string> scene_ids, double train_frac, std::uint64_t seed);

struct ManifestRecord {
  std::string id;
  int shift = 0;
  std::string split;  // "train" or "test"
  bool operator==(const ManifestRecord&) const = default;
};
std::string format_manifest(std::span<const ManifestRecord> records);
std::vector<ManifestRecord> parse_manifest(std::string_view text);

struct CorpusConfig {
  int height = 128;
  int width = 256;
  int scenes_per_class = 3;
  int rotation_copies = 10;
  double train_frac = 0.8;
  std::uint64_t seed = 1;
};

struct CorpusScene {
  std::string id;
  SceneSpec spec;
};

/// Scenes with ids "<class>-<n>", deterministic per seed.
std::vector<CorpusScene> make_scenes(const CorpusConfig& cfg);

/// Writes scenes/<id>.hdr, ldr/<id>.png and manifest.txt (every original
/// and rotation with its split tag) plus tags.txt (id and text tag).
std::vector<ManifestRecord> write_corpus(const std::filesystem::path& dir,
                                         std::span<const CorpusScene> scenes,
                                         const CorpusConfig& cfg);

struct CorpusEntry {
  ManifestRecord record;
  std::string tag;
};
/// Reads manifest.txt and tags.txt; images are loaded by the caller.
std::vector<CorpusEntry> read_corpus_index(const std::filesystem::path& dir);

/// Pair archive: "T2LPAIR1", u32 count, then per pair: u32 base, u32 crop,
/// u32 origin row, u32 origin col, u32 pano height, u32 pano width, f32 beta,
/// u32 samples, u16 source length, source bytes, base*base*3 f32 LR values,
/// then per sample f32 theta, phi, hdr rgb, ldr rgb. Little-endian.
std::vector<std::uint8_t> encode_pairs(std::span<const ScenePair> pairs);
std::vector<ScenePair> decode_pairs(std::span<const std::uint8_t> bytes);
void save_pairs(const std::filesystem::path& path, std::span<const ScenePair> pairs);
std::vector<ScenePair> load_pairs(const std::filesystem::path& path);

}  // namespace t2l::data
