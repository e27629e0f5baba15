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

#include "t2l/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "t2l/embedding.hpp"
#include "t2l/raster.hpp"

namespace t2l::pipeline {
namespace fs = std::filesystem;

PipelineConfig::PipelineConfig() {
  corpus.scenes_per_class = 4;

  auto& g = global_tokenizer;
  g.model.height = 32;
  g.model.width = 64;
  g.model.stages = 3;
  g.model.circular = true;
  g.train.steps = 1000;

  auto& l = local_tokenizer;
  l.model.height = 64;
  l.model.width = 64;
  l.model.stages = 4;
  l.train.steps = 1000;

  global_train.steps = 600;
  local.transformer.context = 128;
  local_train.steps = 800;
  local_train.lr = 2e-3;

  sr_train.steps = 600;
  pairs.base = 16;
}

namespace {

// --- value parsing ------------------------------------------------------------

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  auto bad = [&] { return ConfigError("config: bad value '" + text + "' for " + key); };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw bad();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, fs::path>) {
    if (text.empty()) throw bad();
    return fs::path(text);
  } else if constexpr (std::is_floating_point_v<T>) {
    double v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v)) throw bad();
    return static_cast<T>(v);
  } else {
    T v{};
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) throw bad();
    return v;
  }
}

template <class T>
std::string show_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, fs::path>) {
    return v.string();
  } else {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  }
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool hashed = true;
};

template <class T>
Field bind_field(std::string key, T& ref, bool hashed = true) {
  return {key, [&ref, key](const std::string& v) { ref = parse_value<T>(key, v); },
          [&ref] { return show_value(ref); }, hashed};
}

void bind_tokenizer(std::vector<Field>& f, const std::string& s, TokenizerStage& t) {
  f.push_back(bind_field(s + ".height", t.model.height));
  f.push_back(bind_field(s + ".width", t.model.width));
  f.push_back(bind_field(s + ".stages", t.model.stages));
  f.push_back(bind_field(s + ".base_channels", t.model.base_channels));
  f.push_back(bind_field(s + ".max_channels", t.model.max_channels));
  f.push_back(bind_field(s + ".code_dim", t.model.code_dim));
  f.push_back(bind_field(s + ".codebook_size", t.model.codebook_size));
  f.push_back(bind_field(s + ".circular", t.model.circular));
  f.push_back(bind_field(s + ".beta", t.model.beta));
  f.push_back(bind_field(s + ".dead_after", t.model.dead_after));
  f.push_back(bind_field(s + ".steps", t.train.steps));
  f.push_back(bind_field(s + ".batch", t.train.batch));
  f.push_back(bind_field(s + ".lr", t.train.lr));
}

void bind_schedule(std::vector<Field>& f, const std::string& s, samplers::TrainSchedule& t) {
  f.push_back(bind_field(s + ".steps", t.steps));
  f.push_back(bind_field(s + ".batch", t.batch));
  f.push_back(bind_field(s + ".lr", t.lr));
}

void bind_transformer(std::vector<Field>& f, const std::string& s, samplers::TransformerConfig& t) {
  f.push_back(bind_field(s + ".layers", t.layers));
  f.push_back(bind_field(s + ".heads", t.heads));
  f.push_back(bind_field(s + ".width", t.width));
  f.push_back(bind_field(s + ".context", t.context));
}

std::vector<Field> fields(PipelineConfig& c) {
  std::vector<Field> f;
  f.push_back(bind_field("run.preset", c.preset));
  f.push_back(bind_field("run.seed", c.seed));
  f.push_back(bind_field("paths.work_dir", c.work_dir, false));

  f.push_back(bind_field("corpus.height", c.corpus.height));
  f.push_back(bind_field("corpus.width", c.corpus.width));
  f.push_back(bind_field("corpus.scenes_per_class", c.corpus.scenes_per_class));
  f.push_back(bind_field("corpus.rotation_copies", c.corpus.rotation_copies));
  f.push_back(bind_field("corpus.train_frac", c.corpus.train_frac));

  bind_tokenizer(f, "global_tokenizer", c.global_tokenizer);
  bind_tokenizer(f, "local_tokenizer", c.local_tokenizer);

  bind_transformer(f, "global_sampler", c.global.transformer);
  f.push_back(bind_field("global_sampler.knn", c.global.knn));
  f.push_back(bind_field("global_sampler.alpha", c.global.alpha));
  f.push_back(bind_field("global_sampler.tau", c.global.tau));
  f.push_back(bind_field("global_sampler.con_weight", c.global.con_weight));
  bind_schedule(f, "global_sampler", c.global_train);

  bind_transformer(f, "local_sampler", c.local.transformer);
  f.push_back(bind_field("local_sampler.octaves", c.local.octaves));
  f.push_back(bind_field("local_sampler.stride", c.stride));
  bind_schedule(f, "local_sampler", c.local_train);

  f.push_back(bind_field("sritmo.latent_dim", c.sr.latent_dim));
  f.push_back(bind_field("sritmo.encoder_layers", c.sr.encoder_layers));
  f.push_back(bind_field("sritmo.encoder_width", c.sr.encoder_width));
  f.push_back(bind_field("sritmo.sr_layers", c.sr.sr_layers));
  f.push_back(bind_field("sritmo.sr_hidden", c.sr.sr_hidden));
  f.push_back(bind_field("sritmo.itmo_layers", c.sr.itmo_layers));
  f.push_back(bind_field("sritmo.itmo_hidden", c.sr.itmo_hidden));
  f.push_back(bind_field("sritmo.base", c.pairs.base));
  f.push_back(bind_field("sritmo.beta_min", c.pairs.beta_min));
  f.push_back(bind_field("sritmo.beta_max", c.pairs.beta_max));
  f.push_back(bind_field("sritmo.sigma", c.pairs.sigma));
  f.push_back(bind_field("sritmo.pairs_per_scene", c.pairs_per_scene));
  f.push_back(bind_field("sritmo.steps", c.sr_train.steps));
  f.push_back(bind_field("sritmo.batch", c.sr_train.batch));
  f.push_back(bind_field("sritmo.lr", c.sr_train.lr));

  f.push_back(bind_field("sampling.temperature", c.temperature));
  f.push_back(bind_field("sampling.top_k", c.top_k));

  f.push_back(bind_field("ablation.no_global", c.no_global));
  f.push_back(bind_field("ablation.no_sp", c.local.no_sp));
  f.push_back(bind_field("ablation.no_spe", c.local.no_spe));
  f.push_back(bind_field("ablation.no_knn", c.global.no_knn));
  f.push_back(bind_field("ablation.no_lcon", c.no_lcon));
  f.push_back(bind_field("ablation.single_mlp", c.sr.single_mlp));
  return f;
}

std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage) {
  return fnv1a64(stage, cfg.seed);
}

}  // namespace

// --- configuration ------------------------------------------------------------

PipelineConfig preset_config(const std::string& name) {
  PipelineConfig c;
  if (name == "desk") return c;
  if (name != "full") throw ConfigError("config: unknown preset '" + name + "' (desk or full)");
  c.preset = "full";
  c.corpus.height = 512;
  c.corpus.width = 1024;
  c.global_tokenizer.model.height = 128;
  c.global_tokenizer.model.width = 256;
  c.global_tokenizer.model.stages = 4;
  c.global_tokenizer.model.code_dim = 256;
  c.global_tokenizer.model.max_channels = 256;
  c.global_tokenizer.model.codebook_size = 1024;
  c.local_tokenizer.model.height = 256;
  c.local_tokenizer.model.width = 256;
  c.local_tokenizer.model.code_dim = 256;
  c.local_tokenizer.model.max_channels = 256;
  c.local_tokenizer.model.codebook_size = 1024;
  c.global.transformer = {12, 8, 512, 256};
  c.local.transformer = {12, 8, 512, 1024};
  c.stride = 8;
  c.pairs.base = 128;
  return c;
}

void set_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "run.preset") {
    // A preset replaces everything else; paths and the seed survive.
    auto next = preset_config(value);
    next.seed = cfg.seed;
    next.work_dir = cfg.work_dir;
    cfg = std::move(next);
    return;
  }
  for (auto& f : fields(cfg)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> canonical_values(const PipelineConfig& cfg) {
  auto& mut = const_cast<PipelineConfig&>(cfg);  // getters only read
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields(mut)) {
    if (f.hashed) out.emplace_back(f.key, f.get());
  }
  return out;
}

std::string config_hash(const PipelineConfig& cfg) {
  std::string text;
  for (const auto& [k, v] : canonical_values(cfg)) text += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

PipelineConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, value.data());
  }
  PipelineConfig cfg;
  for (const auto& [k, v] : entries) {
    if (k == "run.preset") set_value(cfg, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "run.preset") set_value(cfg, k, v);
  }
  return cfg;
}

PipelineConfig load_config(const std::optional<fs::path>& path) {
  PipelineConfig cfg;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("config: cannot read " + path->string());
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = parse_config(ss.str());
  }
  if (const char* env = std::getenv("T2L_SEED")) set_value(cfg, "run.seed", env);
  return cfg;
}

std::string format_config(const PipelineConfig& cfg) {
  auto& mut = const_cast<PipelineConfig&>(cfg);
  std::string out, section;
  for (const auto& f : fields(mut)) {
    const auto dot = f.key.find('.');
    const auto s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get() + "\n";
  }
  return out;
}

// --- sidecars -----------------------------------------------------------------

fs::path sidecar_path(const fs::path& output) {
  auto p = output;
  p += ".manifest.txt";
  return p;
}

void write_sidecar(const fs::path& output, const KeyValues& kv) {
  std::string text;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DomainError("sidecar: key or value holds a separator: " + k);
    }
    text += k + "=" + v + "\n";
  }
  write_file_bytes(sidecar_path(output), {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::map<std::string, std::string> read_sidecar(const fs::path& output) {
  const auto path = sidecar_path(output);
  if (!fs::exists(path)) throw MissingDependency("no manifest next to " + output.string() + " (" + path.string() + ")");
  const auto bytes = read_file_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::map<std::string, std::string> out;
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("sidecar: line without '='", n);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

namespace {

KeyValues base_record(const PipelineConfig& cfg, const std::string& command) {
  return {{"command", command}, {"config_hash", config_hash(cfg)}, {"preset", cfg.preset},
          {"seed", std::to_string(cfg.seed)}};
}

void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw MissingDependency("missing " + p.string() + "; run `t2l " + stage + "` first");
  }
}

void load_params(ad::ParamStore& ps, const fs::path& p, const std::string& stage) {
  require(p, stage);
  try {
    ps.load(p);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string(e.what()) + " in " + p.string() +
                      "; the configuration differs from the one it was trained with");
  }
}

void save_params(const PipelineConfig& cfg, const ad::ParamStore& ps, const fs::path& p,
                 const std::string& command, KeyValues extra) {
  fs::create_directories(p.parent_path());
  ps.save(p);
  auto kv = base_record(cfg, command);
  kv.insert(kv.end(), extra.begin(), extra.end());
  write_sidecar(p, kv);
}

// --- corpus access ------------------------------------------------------------

struct Scene {
  std::string id;
  std::string tag;
  bool train = false;
  std::vector<int> shifts;  // 0 first
  HdrImage hdr;
  LdrImage ldr;
};

std::vector<Scene> load_scenes(const PipelineConfig& cfg, bool train_only) {
  const Layout lay{cfg.work_dir};
  require(lay.corpus() / "manifest.txt", "prepare-data");
  std::vector<Scene> scenes;
  for (const auto& e : data::read_corpus_index(lay.corpus())) {
    if (train_only && e.record.split != "train") continue;
    auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& s) { return s.id == e.record.id; });
    if (it == scenes.end()) {
      Scene s;
      s.id = e.record.id;
      s.tag = e.tag;
      s.train = e.record.split == "train";
      scenes.push_back(std::move(s));
      it = scenes.end() - 1;
    }
    it->shifts.push_back(e.record.shift);
  }
  for (auto& s : scenes) {
    s.hdr = read_hdr(lay.corpus() / "scenes" / (s.id + ".hdr"));
    s.ldr = read_png(lay.corpus() / "ldr" / (s.id + ".png"));
    if (s.ldr.height() != cfg.corpus.height || s.ldr.width() != cfg.corpus.width) {
      throw DomainError("corpus: " + s.id + " is " + std::to_string(s.ldr.height()) + "x" +
                        std::to_string(s.ldr.width()) + ", configuration expects " +
                        std::to_string(cfg.corpus.height) + "x" + std::to_string(cfg.corpus.width));
    }
  }
  if (scenes.empty()) throw DomainError("corpus: no scenes in the requested split");
  return scenes;
}

LdrImage global_image(const PipelineConfig& cfg, const LdrImage& pano, int shift) {
  const auto& m = cfg.global_tokenizer.model;
  return resample_area(shift == 0 ? pano : rotate_horizontal(pano, shift), m.height, m.width);
}

std::string rotation_key(const std::string& id, int shift) { return id + "@" + std::to_string(shift); }

double tail_mean(std::span<const double> log) {
  if (log.empty()) return 0;
  const std::size_t n = std::max<std::size_t>(1, log.size() / 10);
  return std::accumulate(log.end() - static_cast<long>(n), log.end(), 0.0) / static_cast<double>(n);
}

// --- model construction -------------------------------------------------------

vq::Tokenizer make_tokenizer(const PipelineConfig& cfg, bool global) {
  const auto& st = global ? cfg.global_tokenizer : cfg.local_tokenizer;
  return vq::Tokenizer(st.model, stage_seed(cfg, global ? "global_tokenizer" : "local_tokenizer"));
}

vq::Tokenizer load_tokenizer(const PipelineConfig& cfg, bool global) {
  auto tok = make_tokenizer(cfg, global);
  const std::string stage = global ? "global_tokenizer" : "local_tokenizer";
  load_params(tok.params(), Layout{cfg.work_dir}.ckpt(stage), "train-codebooks");
  return tok;
}

samplers::GlobalConfig global_config(const PipelineConfig& cfg) {
  auto g = cfg.global;
  if (cfg.no_lcon) g.con_weight = 0;
  return g;
}

samplers::GlobalSampler make_global(const PipelineConfig& cfg, int cond_dim) {
  const auto& m = cfg.global_tokenizer.model;
  return samplers::GlobalSampler(global_config(cfg), m.codebook_size, m.token_rows(), m.token_cols(),
                                 cond_dim, stage_seed(cfg, "global_sampler"));
}

samplers::LocalSampler make_local(const PipelineConfig& cfg) {
  const auto& l = cfg.local_tokenizer.model;
  const auto& g = cfg.global_tokenizer.model;
  const int gr = cfg.no_global ? 0 : g.token_rows();
  const int gc = cfg.no_global ? 0 : g.token_cols();
  return samplers::LocalSampler(cfg.local, l.codebook_size, cfg.no_global ? 1 : g.codebook_size,
                                l.token_rows(), l.token_cols(), gr, gc, stage_seed(cfg, "local_sampler"));
}

vq::TokenGrid holistic_grid(const PipelineConfig& cfg, const vq::Tokenizer* global_tok, const LdrImage& pano) {
  if (cfg.no_global) return vq::TokenGrid(0, 0);
  return global_tok->encode(global_image(cfg, pano, 0));
}

std::string join_tokens(const vq::TokenGrid& g) {
  std::string s = std::to_string(g.rows) + "x" + std::to_string(g.cols) + ":";
  for (std::size_t k = 0; k < g.indices.size(); ++k) s += (k ? " " : "") + std::to_string(g.indices[k]);
  return s;
}

vq::TokenGrid parse_tokens(const std::string& text) {
  const auto x = text.find('x'), colon = text.find(':');
  if (x == std::string::npos || colon == std::string::npos || colon < x) {
    throw ParseError("sidecar: malformed token grid", 0);
  }
  vq::TokenGrid g(parse_value<int>("rows", text.substr(0, x)),
                  parse_value<int>("cols", text.substr(x + 1, colon - x - 1)));
  std::istringstream in(text.substr(colon + 1));
  for (auto& v : g.indices) {
    if (!(in >> v)) throw ParseError("sidecar: token grid shorter than its shape", 0);
  }
  return g;
}

samplers::SampleConfig sample_config(const PipelineConfig& cfg, int vocab, std::uint64_t seed) {
  return {cfg.temperature, std::min(cfg.top_k, vocab), seed};
}

}  // namespace

// --- stages -------------------------------------------------------------------

void prepare_data(const PipelineConfig& cfg) {
  const Layout lay{cfg.work_dir};
  auto corpus = cfg.corpus;
  corpus.seed = stage_seed(cfg, "corpus");
  const auto scenes = data::make_scenes(corpus);
  const auto records = data::write_corpus(lay.corpus(), scenes, corpus);
  auto kv = base_record(cfg, "prepare-data");
  kv.emplace_back("scenes", std::to_string(scenes.size()));
  kv.emplace_back("records", std::to_string(records.size()));
  write_sidecar(lay.corpus() / "corpus", kv);
}

std::pair<double, double> train_codebooks(const PipelineConfig& cfg) {
  const Layout lay{cfg.work_dir};
  const auto scenes = load_scenes(cfg, true);

  std::vector<LdrImage> global_set;
  for (const auto& s : scenes) {
    for (int shift : s.shifts) global_set.push_back(global_image(cfg, s.ldr, shift));
  }
  const auto& lm = cfg.local_tokenizer.model;
  const int f = lm.factor();
  if (cfg.corpus.height % f != 0 || cfg.corpus.width % f != 0) {
    throw ConfigError("config: panorama size is not a multiple of the local token factor");
  }
  std::vector<LdrImage> local_set;
  for (const auto& s : scenes) {
    for (int r : samplers::window_origins(cfg.corpus.height / f, lm.token_rows(), cfg.stride, false)) {
      for (int c : samplers::window_origins(cfg.corpus.width / f, lm.token_cols(), cfg.stride, true)) {
        local_set.push_back(crop_wrap(s.ldr, r * f, c * f, lm.height, lm.width));
      }
    }
  }

  std::pair<double, double> mse{0, 0};
  for (bool global : {true, false}) {
    if (global && cfg.no_global) continue;
    auto tok = make_tokenizer(cfg, global);
    auto tc = global ? cfg.global_tokenizer.train : cfg.local_tokenizer.train;
    tc.seed = stage_seed(cfg, global ? "global_tokenizer.train" : "local_tokenizer.train");
    const auto& set = global ? global_set : local_set;
    vq::train_tokenizer(tok, set, tc);
    const double m = vq::reconstruction_mse(tok, set);
    (global ? mse.first : mse.second) = m;
    const std::string stage = global ? "global_tokenizer" : "local_tokenizer";
    save_params(cfg, tok.params(), lay.ckpt(stage), "train-codebooks",
                {{"stage", stage}, {"images", std::to_string(set.size())}, {"mse", show_value(m)}});
  }
  return mse;
}

double train_global_stage(const PipelineConfig& cfg) {
  if (cfg.no_global) throw ConfigError("train-global: disabled by ablation.no_global");
  const Layout lay{cfg.work_dir};
  const auto tok = load_tokenizer(cfg, true);
  const auto scenes = load_scenes(cfg, true);
  std::vector<samplers::GlobalExample> examples;
  embedding::EmbeddingStore store(embedding::kToyDim);
  for (const auto& s : scenes) {
    for (int shift : s.shifts) {
      const auto img = global_image(cfg, s.ldr, shift);
      auto v = embedding::toy_image_embed(img);
      store.add(rotation_key(s.id, shift), v);
      examples.push_back({tok.encode(img), std::move(v)});
    }
  }
  fs::create_directories(lay.store().parent_path());
  embedding::save_store(store, lay.store());

  auto sampler = make_global(cfg, store.dim());
  auto sched = cfg.global_train;
  sched.seed = stage_seed(cfg, "global_sampler.train");
  const auto log = samplers::train_global(sampler, examples, store, sched);
  std::vector<double> nll;
  for (const auto& st : log) nll.push_back(st.nll);
  const double tail = tail_mean(nll);
  save_params(cfg, sampler.params(), lay.ckpt("global_sampler"), "train-global",
              {{"examples", std::to_string(examples.size())}, {"final_nll", show_value(tail)}});
  return tail;
}

double train_local_stage(const PipelineConfig& cfg) {
  const Layout lay{cfg.work_dir};
  std::optional<vq::Tokenizer> gtok;
  if (!cfg.no_global) gtok.emplace(load_tokenizer(cfg, true));
  const auto ltok = load_tokenizer(cfg, false);
  const auto scenes = load_scenes(cfg, true);
  std::vector<samplers::LocalExample> examples;
  for (const auto& s : scenes) {
    const auto g = holistic_grid(cfg, gtok ? &*gtok : nullptr, s.ldr);
    auto ex = samplers::local_examples(s.ldr, g, ltok, cfg.stride, cfg.local.octaves);
    examples.insert(examples.end(), ex.begin(), ex.end());
  }
  auto sampler = make_local(cfg);
  auto sched = cfg.local_train;
  sched.seed = stage_seed(cfg, "local_sampler.train");
  const auto log = samplers::train_local(sampler, examples, sched);
  const double tail = tail_mean(log);
  save_params(cfg, sampler.params(), lay.ckpt("local_sampler"), "train-local",
              {{"examples", std::to_string(examples.size())}, {"final_nll", show_value(tail)}});
  return tail;
}

double train_sritmo_stage(const PipelineConfig& cfg) {
  const Layout lay{cfg.work_dir};
  const auto scenes = load_scenes(cfg, true);
  Rng rng(stage_seed(cfg, "sritmo.pairs"));
  std::vector<data::ScenePair> pairs;
  for (const auto& s : scenes) {
    const auto pano = data::prepare_pano(s.hdr, cfg.pairs);
    auto p = data::build_pairs(pano, cfg.pairs_per_scene, rng, cfg.pairs, s.id);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  fs::create_directories(lay.pairs().parent_path());
  data::save_pairs(lay.pairs(), pairs);

  sritmo::SrItmoModel model(cfg.sr, stage_seed(cfg, "sritmo"));
  auto tc = cfg.sr_train;
  tc.seed = stage_seed(cfg, "sritmo.train");
  const auto log = sritmo::train_sritmo(model, pairs, tc);
  std::vector<double> total;
  for (const auto& st : log) total.push_back(st.total);
  const double tail = tail_mean(total);
  save_params(cfg, model.params(), lay.ckpt("sritmo"), "train-sritmo",
              {{"pairs", std::to_string(pairs.size())}, {"final_loss", show_value(tail)}});
  return tail;
}

// --- generation ---------------------------------------------------------------

namespace {

Generation run_generation(const PipelineConfig& cfg, const std::string& text, std::uint64_t seed,
                          std::span<const int> frozen) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ConfigError("empty prompt");
  const Layout lay{cfg.work_dir};
  Generation out;
  if (!cfg.no_global) {
    require(lay.store(), "train-global");
    const auto store = embedding::load_store(lay.store());
    auto gs = make_global(cfg, store.dim());
    load_params(gs.params(), lay.ckpt("global_sampler"), "train-global");
    const auto t = embedding::toy_text_embed(text, store.dim());
    const auto cond = gs.condition(t, store);
    out.global = gs.sample(cond, sample_config(cfg, gs.vocab(), seed), frozen).grid;
  } else {
    out.global = vq::TokenGrid(0, 0);
  }
  const auto ltok = load_tokenizer(cfg, false);
  auto ls = make_local(cfg);
  load_params(ls.params(), lay.ckpt("local_sampler"), "train-local");
  out.panorama = samplers::generate_panorama(out.global, ls, ltok, cfg.corpus.height, cfg.corpus.width,
                                             cfg.stride, sample_config(cfg, ls.vocab(), fnv1a64("local", seed)));
  return out;
}

void write_generation(const PipelineConfig& cfg, const Generation& g, const fs::path& out, KeyValues kv) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(out, g.panorama.image);
  kv.emplace_back("global_tokens", join_tokens(g.global));
  kv.emplace_back("output", out.filename().string());
  write_sidecar(out, kv);
}

}  // namespace

Generation generate(const PipelineConfig& cfg, const std::string& text, std::uint64_t seed,
                    const fs::path& out) {
  auto g = run_generation(cfg, text, seed, {});
  auto kv = base_record(cfg, "generate");
  kv.emplace_back("text", text);
  kv.emplace_back("sample_seed", std::to_string(seed));
  write_generation(cfg, g, out, kv);
  return g;
}

Generation edit(const PipelineConfig& cfg, const fs::path& source, const std::string& text, int col_begin,
                int col_end, std::uint64_t seed, const fs::path& out) {
  if (cfg.no_global) throw ConfigError("edit: regions live on the global grid, disabled by ablation.no_global");
  const auto meta = read_sidecar(source);
  const auto it = meta.find("global_tokens");
  if (it == meta.end()) throw ParseError("sidecar of " + source.string() + " has no global_tokens", 0);
  auto grid = parse_tokens(it->second);
  const auto& m = cfg.global_tokenizer.model;
  if (grid.rows != m.token_rows() || grid.cols != m.token_cols()) {
    throw ConfigError("edit: source grid does not match the configured global tokenizer");
  }
  if (col_begin < 0 || col_end > grid.cols || col_begin >= col_end) {
    throw ConfigError("edit: region must satisfy 0 <= begin < end <= " + std::to_string(grid.cols));
  }
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = col_begin; c < col_end; ++c) grid.at(r, c) = -1;
  }
  auto g = run_generation(cfg, text, seed, grid.indices);
  auto kv = base_record(cfg, "edit");
  kv.emplace_back("text", text);
  kv.emplace_back("sample_seed", std::to_string(seed));
  kv.emplace_back("source", source.string());
  kv.emplace_back("region", std::to_string(col_begin) + ":" + std::to_string(col_end));
  write_generation(cfg, g, out, kv);
  return g;
}

HdrImage upscale_image(const PipelineConfig& cfg, const fs::path& input, double factor, const fs::path& out) {
  const Layout lay{cfg.work_dir};
  sritmo::SrItmoModel model(cfg.sr, stage_seed(cfg, "sritmo"));
  load_params(model.params(), lay.ckpt("sritmo"), "train-sritmo");
  const auto ldr = read_png(input);
  auto up = sritmo::upscale(model, ldr, factor);
  // The tone-mapping inverse is scale-free; anchor it the way training data
  // was anchored, against the unsaturated part of the upscaled LDR.
  std::string scale = "calibrated";
  HdrImage hdr;
  try {
    hdr = calibrate(up.hdr, up.ldr, cfg.pairs.sigma);
  } catch (const CalibrationError&) {
    hdr = up.hdr;
    scale = "raw";
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_hdr(out, hdr);
  auto preview = out;
  preview.replace_extension(".png");
  write_png(preview, expose(hdr, 0));
  auto kv = base_record(cfg, "upscale");
  kv.emplace_back("input", input.string());
  kv.emplace_back("factor", show_value(factor));
  kv.emplace_back("scale", scale);
  kv.emplace_back("output", out.filename().string());
  kv.emplace_back("preview", preview.filename().string());
  write_sidecar(out, kv);
  return hdr;
}

// --- evaluation ---------------------------------------------------------------

namespace {
void check_same_shape(const HdrImage& a, const HdrImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("metrics: " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}
}  // namespace

double mae(const HdrImage& pred, const HdrImage& gt) {
  check_same_shape(pred, gt);
  const auto p = pred.values(), g = gt.values();
  double s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(static_cast<double>(p[k]) - g[k]);
  return s / static_cast<double>(p.size());
}

double rmse(const HdrImage& pred, const HdrImage& gt) {
  check_same_shape(pred, gt);
  const auto p = pred.values(), g = gt.values();
  double s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double d = static_cast<double>(p[k]) - g[k];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(p.size()));
}

ItmoScores eval_itmo(const fs::path& manifest) {
  const auto bytes = read_file_bytes(manifest);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  const auto dir = manifest.parent_path();
  double abs_sum = 0, sq_sum = 0;
  std::size_t count = 0;
  ItmoScores out;
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string pred, gt, extra;
    if (!(fields >> pred >> gt) || (fields >> extra)) {
      throw ParseError("eval manifest: expected '<pred.hdr> <gt.hdr>'", n);
    }
    const auto p = read_hdr(dir / pred), g = read_hdr(dir / gt);
    const double m = mae(p, g), r = rmse(p, g);
    const double values = static_cast<double>(p.values().size());
    abs_sum += m * values;
    sq_sum += r * r * values;
    count += p.values().size();
    ++out.images;
  }
  if (out.images == 0) throw DomainError("eval manifest lists no images");
  out.mae = abs_sum / static_cast<double>(count);
  out.rmse = std::sqrt(sq_sum / static_cast<double>(count));
  return out;
}

}  // namespace t2l::pipeline
