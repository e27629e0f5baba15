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

#include "t2l/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

namespace t2l::data {

namespace {

using std::numbers::pi;

struct Dir {
  double x, y, z;
};

Dir direction(double theta, double elevation) {
  return {std::cos(elevation) * std::cos(theta), std::cos(elevation) * std::sin(theta),
          std::sin(elevation)};
}

double angle_between(const Dir& a, const Dir& b) {
  const double d = std::clamp(a.x * b.x + a.y * b.y + a.z * b.z, -1.0, 1.0);
  return std::acos(d);
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {static_cast<float>(a[0] + (b[0] - a[0]) * t), static_cast<float>(a[1] + (b[1] - a[1]) * t),
          static_cast<float>(a[2] + (b[2] - a[2]) * t)};
}

Rgb jitter(const Rgb& c, double amount, Rng& rng) {
  Rgb out;
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<float>(std::clamp(c[k] + uniform(rng, -amount, amount), 0.02, 1.0));
  }
  return out;
}

// Background radiance (everything except the emitter disk), all <= 1.
Rgb background(const SceneSpec& s, double theta, double elev) {
  if (s.cls == SceneClass::kInteriorLamp) {
    if (elev > 0.9) return s.zenith;  // ceiling
    if (elev < -0.5) {                // floor planks along the longitude
      const double plank = 0.85 + 0.15 * std::sin(theta * 24);
      return lerp(Rgb{0, 0, 0}, s.ground, plank);
    }
    // Walls with soft vertical panels.
    const double panel = 0.5 + 0.5 * std::tanh(3 * std::sin(theta * 6));
    return lerp(s.horizon, s.ground_alt, 0.35 * panel);
  }
  if (elev >= 0) {
    return lerp(s.horizon, s.zenith, std::pow(elev / (pi / 2), 0.6));
  }
  if (s.cls == SceneClass::kCheckerGround) {
    const double cu = theta * s.checker_cells / (2 * pi);
    const double cv = elev * s.checker_cells / (2 * pi);
    const double w = 0.5 + 0.5 * std::tanh(4 * std::sin(pi * cu) * std::sin(pi * cv));
    return lerp(s.ground, s.ground_alt, w);
  }
  // Ground darkening slightly toward the nadir.
  return lerp(s.ground, Rgb{0, 0, 0}, 0.3 * (-elev) / (pi / 2));
}

}  // namespace

std::string_view class_name(SceneClass c) {
  switch (c) {
    case SceneClass::kSkyGradient: return "sky-gradient";
    case SceneClass::kSunDisk: return "sun-disk";
    case SceneClass::kInteriorLamp: return "interior-lamp";
    case SceneClass::kCheckerGround: return "checker-ground";
  }
  return "unknown";
}

SceneClass parse_class(std::string_view name) {
  for (auto c : kAllClasses) {
    if (class_name(c) == name) return c;
  }
  throw DomainError("unknown scene class '" + std::string(name) + "'");
}

std::string_view class_tag(SceneClass c) {
  switch (c) {
    case SceneClass::kSkyGradient: return "clear blue sky above a grassy plain";
    case SceneClass::kSunDisk: return "bright sunny day with the sun high in the sky";
    case SceneClass::kInteriorLamp: return "dim indoor room lit by a warm lamp";
    case SceneClass::kCheckerGround: return "checkered tile floor under an open sky";
  }
  return "";
}

SceneSpec random_scene(SceneClass c, Rng& rng) {
  SceneSpec s;
  s.cls = c;
  s.tag = std::string(class_tag(c));
  switch (c) {
    case SceneClass::kSkyGradient:
      s.zenith = jitter({0.20f, 0.40f, 0.85f}, 0.08, rng);
      s.horizon = jitter({0.70f, 0.82f, 0.95f}, 0.05, rng);
      s.ground = jitter({0.30f, 0.45f, 0.20f}, 0.06, rng);
      break;
    case SceneClass::kSunDisk:
      s.zenith = jitter({0.15f, 0.35f, 0.80f}, 0.08, rng);
      s.horizon = jitter({0.75f, 0.80f, 0.85f}, 0.05, rng);
      s.ground = jitter({0.40f, 0.35f, 0.25f}, 0.06, rng);
      s.emitter_theta = uniform(rng, -pi, pi);
      s.emitter_elevation = uniform(rng, 0.3, 1.4);
      s.emitter_radius = uniform(rng, 0.08, 0.14);
      s.emitter_radiance = uniform(rng, 10.0, 60.0);
      break;
    case SceneClass::kInteriorLamp:
      s.zenith = jitter({0.55f, 0.52f, 0.48f}, 0.05, rng);     // ceiling
      s.horizon = jitter({0.45f, 0.35f, 0.25f}, 0.06, rng);    // walls
      s.ground_alt = jitter({0.25f, 0.18f, 0.12f}, 0.04, rng); // wall panels
      s.ground = jitter({0.22f, 0.14f, 0.08f}, 0.04, rng);     // floor
      s.emitter_theta = uniform(rng, -pi, pi);
      s.emitter_elevation = uniform(rng, 0.95, 1.35);
      s.emitter_radius = uniform(rng, 0.10, 0.16);
      s.emitter_radiance = uniform(rng, 4.0, 20.0);
      break;
    case SceneClass::kCheckerGround:
      s.zenith = jitter({0.25f, 0.45f, 0.85f}, 0.08, rng);
      s.horizon = jitter({0.75f, 0.85f, 0.95f}, 0.05, rng);
      s.ground = jitter({0.10f, 0.10f, 0.12f}, 0.04, rng);
      s.ground_alt = jitter({0.90f, 0.88f, 0.85f}, 0.04, rng);
      s.checker_cells = 8 + 4 * static_cast<int>(uniform_index(rng, 4));
      break;
  }
  return s;
}

HdrImage synth_pano(const SceneSpec& spec, int height, int width) {
  if (height < 1 || width != 2 * height) {
    throw DomainError("synth_pano: needs H:W = 1:2, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  HdrImage img(height, width);
  const Dir e = direction(spec.emitter_theta, spec.emitter_elevation);
  constexpr int kSuper = 4;
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const auto c = sphere::pixel_to_sphere(i, j, height, width);
      const double elev = -c.phi;
      Rgb px = background(spec, c.theta, elev);
      if (spec.has_emitter()) {
        // Coverage of the disk by a 4x4 grid of sub-pixel directions.
        int inside = 0;
        const double near = angle_between(direction(c.theta, elev), e);
        const double pixel_span = 2 * pi / width * 1.5;
        if (near < spec.emitter_radius + pixel_span) {
          for (int sy = 0; sy < kSuper; ++sy) {
            for (int sx = 0; sx < kSuper; ++sx) {
              const auto sc = sphere::fractional_pixel_to_sphere(
                  i + (sy + 0.5) / kSuper - 0.5, j + (sx + 0.5) / kSuper - 0.5, height, width);
              inside += angle_between(direction(sc.theta, -sc.phi), e) < spec.emitter_radius;
            }
          }
        }
        const double cov = static_cast<double>(inside) / (kSuper * kSuper);
        // A faint glow around the disk.
        const double glow = near > spec.emitter_radius
                                ? 0.25 * std::exp(-(near - spec.emitter_radius) / 0.12)
                                : 0.0;
        for (int k = 0; k < 3; ++k) {
          const double bg = px[k] + glow;
          px[k] = static_cast<float>((1 - cov) * bg + cov * spec.emitter_radiance);
        }
      }
      for (int k = 0; k < 3; ++k) img.at(i, j, k) = px[k];
    }
  }
  return img;
}

PreparedPano prepare_pano(const HdrImage& hdr, const PairConfig& cfg) {
  PreparedPano p;
  p.ldr = reinhard_tonemap(hdr, cfg.tonemap);
  p.hdr = calibrate(hdr, p.ldr, cfg.sigma);
  return p;
}

std::vector<ScenePair> build_pairs(const PreparedPano& pano, int count, Rng& rng,
                                   const PairConfig& cfg, std::string_view source, double beta) {
  const int h = pano.ldr.height(), w = pano.ldr.width();
  if (pano.hdr.height() != h || pano.hdr.width() != w) {
    throw ShapeError("build_pairs: HDR and LDR sizes differ");
  }
  if (cfg.base < 1) throw DomainError("build_pairs: base must be positive");
  std::vector<ScenePair> out;
  for (int n = 0; n < count; ++n) {
    ScenePair p;
    p.beta = beta >= 0 ? beta : uniform(rng, cfg.beta_min, cfg.beta_max);
    if (p.beta < 1) throw DomainError("build_pairs: beta below 1");
    p.crop = static_cast<int>(std::lround(cfg.base * p.beta));
    if (p.crop > h) {
      throw DomainError("build_pairs: crop of " + std::to_string(p.crop) +
                        " rows exceeds the panorama height " + std::to_string(h));
    }
    p.origin_row = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h - p.crop + 1)));
    p.origin_col = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
    p.pano_height = h;
    p.pano_width = w;
    p.source = std::string(source);
    const auto ldr_crop = crop_wrap(pano.ldr, p.origin_row, p.origin_col, p.crop, p.crop);
    const auto hdr_crop = crop_wrap(pano.hdr, p.origin_row, p.origin_col, p.crop, p.crop);
    p.ldr_lr = resample_area(ldr_crop, cfg.base, cfg.base);
    // Partial Fisher-Yates: base^2 distinct crop pixels.
    const std::size_t total = static_cast<std::size_t>(p.crop) * p.crop;
    const std::size_t take = std::min(total, static_cast<std::size_t>(cfg.base) * cfg.base);
    std::vector<std::uint32_t> idx(total);
    for (std::size_t k = 0; k < total; ++k) idx[k] = static_cast<std::uint32_t>(k);
    for (std::size_t k = 0; k < take; ++k) {
      std::swap(idx[k], idx[k + uniform_index(rng, total - k)]);
    }
    p.coords.reserve(take);
    p.hdr.reserve(take * 3);
    p.ldr.reserve(take * 3);
    for (std::size_t k = 0; k < take; ++k) {
      const int r = static_cast<int>(idx[k] / p.crop), c = static_cast<int>(idx[k] % p.crop);
      p.coords.push_back(
          sphere::pixel_to_sphere(p.origin_row + r, (p.origin_col + c) % w, h, w));
      for (int ch = 0; ch < 3; ++ch) {
        p.hdr.push_back(hdr_crop.at(r, c, ch));
        p.ldr.push_back(ldr_crop.at(r, c, ch));
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Rotation> rotation_shifts(int width, int copies) {
  if (width < 1 || copies < 0) throw DomainError("rotation_shifts: bad width or copy count");
  std::vector<Rotation> out;
  for (int k = 1; k <= copies; ++k) {
    const int shift = static_cast<int>(std::lround(static_cast<double>(k) * width / copies)) % width;
    if (shift != 0) out.push_back({shift, k});
  }
  return out;
}

Split make_split(std::span<const std::string> scene_ids, double train_frac, std::uint64_t seed) {
  if (scene_ids.empty()) throw DomainError("make_split: empty corpus");
  if (!(train_frac >= 0 && train_frac <= 1)) throw DomainError("make_split: fraction outside [0,1]");
  std::vector<std::string> ids(scene_ids.begin(), scene_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() == 1 && train_frac < 1) {
    throw DomainError("make_split: a single scene cannot be split");
  }
  Rng rng(seed);
  for (std::size_t k = ids.size(); k > 1; --k) std::swap(ids[k - 1], ids[uniform_index(rng, k)]);
  const auto n_train = static_cast<std::size_t>(std::lround(train_frac * static_cast<double>(ids.size())));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::string format_manifest(std::span<const ManifestRecord> records) {
  std::string out = "# id shift split\n";
  for (const auto& r : records) {
    out += r.id + " " + std::to_string(r.shift) + " " + r.split + "\n";
  }
  return out;
}

std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestRecord r;
    std::string extra;
    if (!(ls >> r.id >> r.shift >> r.split) || (ls >> extra) ||
        (r.split != "train" && r.split != "test")) {
      throw ParseError("manifest: malformed line '" + line + "'", lineno);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusScene> make_scenes(const CorpusConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<CorpusScene> out;
  for (auto c : kAllClasses) {
    for (int n = 0; n < cfg.scenes_per_class; ++n) {
      out.push_back({std::string(class_name(c)) + "-" + std::to_string(n), random_scene(c, rng)});
    }
  }
  return out;
}

std::vector<ManifestRecord> write_corpus(const std::filesystem::path& dir,
                                         std::span<const CorpusScene> scenes,
                                         const CorpusConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scenes");
  fs::create_directories(dir / "ldr");
  std::vector<std::string> ids;
  for (const auto& s : scenes) ids.push_back(s.id);
  const auto split = make_split(ids, cfg.train_frac, cfg.seed);
  std::vector<ManifestRecord> records;
  std::string tags;
  for (const auto& s : scenes) {
    const auto hdr = synth_pano(s.spec, cfg.height, cfg.width);
    write_hdr(dir / "scenes" / (s.id + ".hdr"), hdr);
    write_png(dir / "ldr" / (s.id + ".png"), reinhard_tonemap(hdr));
    const bool train = std::binary_search(split.train.begin(), split.train.end(), s.id);
    const std::string tag = train ? "train" : "test";
    records.push_back({s.id, 0, tag});
    for (const auto& r : rotation_shifts(cfg.width, cfg.rotation_copies)) {
      records.push_back({s.id, r.shift, tag});
    }
    tags += s.id + "\t" + s.spec.tag + "\n";
  }
  const auto m = format_manifest(records);
  write_file_bytes(dir / "manifest.txt", {reinterpret_cast<const std::uint8_t*>(m.data()), m.size()});
  write_file_bytes(dir / "tags.txt", {reinterpret_cast<const std::uint8_t*>(tags.data()), tags.size()});
  return records;
}

std::vector<CorpusEntry> read_corpus_index(const std::filesystem::path& dir) {
  const auto mbytes = read_file_bytes(dir / "manifest.txt");
  const auto records = parse_manifest({reinterpret_cast<const char*>(mbytes.data()), mbytes.size()});
  const auto tbytes = read_file_bytes(dir / "tags.txt");
  std::istringstream in(std::string(tbytes.begin(), tbytes.end()));
  std::vector<std::pair<std::string, std::string>> tags;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    tags.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  std::vector<CorpusEntry> out;
  for (const auto& r : records) {
    const auto it = std::find_if(tags.begin(), tags.end(), [&](const auto& t) { return t.first == r.id; });
    if (it == tags.end()) throw ParseError("corpus: no tag for scene '" + r.id + "'", 0);
    out.push_back({r, it->second});
  }
  return out;
}

// --- pair archive -----------------------------------------------------------------

namespace {

constexpr char kPairMagic[8] = {'T', '2', 'L', 'P', 'A', 'I', 'R', '1'};

class Writer {
 public:
  void u(std::uint32_t v, int bytes = 4) {
    for (int k = 0; k < bytes; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u(bits);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u(int bytes = 4) {
    need(static_cast<std::size_t>(bytes));
    std::uint32_t v = 0;
    for (int k = 0; k < bytes; ++k) v |= static_cast<std::uint32_t>(b_[pos_ + k]) << (8 * k);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  float f() {
    const auto bits = u();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string s(std::size_t n) {
    need(n);
    std::string out(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return out;
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw ParseError("pair archive: truncated", pos_);
  }
  std::size_t pos() const { return pos_; }
  std::size_t left() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_pairs(std::span<const ScenePair> pairs) {
  Writer w;
  w.out.assign(std::begin(kPairMagic), std::end(kPairMagic));
  w.u(static_cast<std::uint32_t>(pairs.size()));
  for (const auto& p : pairs) {
    w.u(static_cast<std::uint32_t>(p.ldr_lr.height()));
    w.u(static_cast<std::uint32_t>(p.crop));
    w.u(static_cast<std::uint32_t>(p.origin_row));
    w.u(static_cast<std::uint32_t>(p.origin_col));
    w.u(static_cast<std::uint32_t>(p.pano_height));
    w.u(static_cast<std::uint32_t>(p.pano_width));
    w.f(static_cast<float>(p.beta));
    w.u(static_cast<std::uint32_t>(p.samples()));
    w.u(static_cast<std::uint32_t>(p.source.size()), 2);
    w.out.insert(w.out.end(), p.source.begin(), p.source.end());
    for (float v : p.ldr_lr.values()) w.f(v);
    for (std::size_t k = 0; k < p.samples(); ++k) {
      w.f(static_cast<float>(p.coords[k].theta));
      w.f(static_cast<float>(p.coords[k].phi));
      for (int c = 0; c < 3; ++c) w.f(p.hdr[k * 3 + c]);
      for (int c = 0; c < 3; ++c) w.f(p.ldr[k * 3 + c]);
    }
  }
  return std::move(w.out);
}

std::vector<ScenePair> decode_pairs(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.s(sizeof kPairMagic) != std::string(kPairMagic, sizeof kPairMagic)) {
    throw ParseError("pair archive: bad magic", 0);
  }
  const auto count = r.u();
  std::vector<ScenePair> out;
  for (std::uint32_t n = 0; n < count; ++n) {
    ScenePair p;
    const int base = static_cast<int>(r.u());
    p.crop = static_cast<int>(r.u());
    p.origin_row = static_cast<int>(r.u());
    p.origin_col = static_cast<int>(r.u());
    p.pano_height = static_cast<int>(r.u());
    p.pano_width = static_cast<int>(r.u());
    p.beta = r.f();
    const auto samples = r.u();
    p.source = r.s(r.u(2));
    const std::size_t lr = static_cast<std::size_t>(base) * base * 3;
    if (lr / 3 > r.left() / 12 || samples > r.left() / 32) {
      throw ParseError("pair archive: record " + std::to_string(n) + " truncated", r.pos());
    }
    p.ldr_lr = LdrImage(base, base);
    for (auto& v : p.ldr_lr.values()) v = r.f();
    p.coords.resize(samples);
    p.hdr.resize(samples * 3);
    p.ldr.resize(samples * 3);
    for (std::size_t k = 0; k < samples; ++k) {
      p.coords[k].theta = r.f();
      p.coords[k].phi = r.f();
      for (int c = 0; c < 3; ++c) p.hdr[k * 3 + c] = r.f();
      for (int c = 0; c < 3; ++c) p.ldr[k * 3 + c] = r.f();
    }
    out.push_back(std::move(p));
  }
  if (r.left() != 0) throw ParseError("pair archive: trailing bytes", r.pos());
  return out;
}

void save_pairs(const std::filesystem::path& path, std::span<const ScenePair> pairs) {
  write_file_bytes(path, encode_pairs(pairs));
}

std::vector<ScenePair> load_pairs(const std::filesystem::path& path) {
  return decode_pairs(read_file_bytes(path));
}

}  // namespace t2l::data
