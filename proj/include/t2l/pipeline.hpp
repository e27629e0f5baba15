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

// Stage-wise orchestration shared by the `t2l` tool and the acceptance
// runner: configuration, checkpoint layout, and one entry point per command.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "t2l/datapipe.hpp"
#include "t2l/samplers.hpp"
#include "t2l/sritmo.hpp"
#include "t2l/vq.hpp"

namespace t2l::pipeline {

/// Malformed or unknown configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage's prerequisite artifact is absent (exit code 3).
class MissingDependency : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenizerStage {
  vq::TokenizerConfig model;
  vq::TrainConfig train;
};

struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::filesystem::path work_dir = "t2l_work";

  data::CorpusConfig corpus;
  TokenizerStage global_tokenizer;
  TokenizerStage local_tokenizer;

  samplers::GlobalConfig global;
  samplers::TrainSchedule global_train;
  samplers::LocalConfig local;
  samplers::TrainSchedule local_train;
  int stride = 2;  // local window stride in tokens

  sritmo::SrItmoConfig sr;
  sritmo::SrTrainConfig sr_train;
  data::PairConfig pairs;
  int pairs_per_scene = 16;

  double temperature = 1.0;
  int top_k = 100;

  bool no_global = false;
  bool no_lcon = false;

  PipelineConfig();
};

/// Desk or full-scale defaults; throws ConfigError for other names.
PipelineConfig preset_config(const std::string& name);

/// Applies one `section.key = value`; unknown keys and unparsable values
/// throw ConfigError.
void set_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Every hashed key with its current value, in a fixed order. Paths are
/// excluded so that moving a work directory keeps the hash.
std::vector<std::pair<std::string, std::string>> canonical_values(const PipelineConfig& cfg);

/// FNV-1a over the canonical `key=value` lines, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

/// INI text with [section] headers. `run.preset` is applied before the other
/// keys regardless of position.
PipelineConfig parse_config(const std::string& text);
/// File contents through parse_config, then `T2L_SEED` if set.
PipelineConfig load_config(const std::optional<std::filesystem::path>& path);

/// Canonical INI rendering that parse_config reads back unchanged.
std::string format_config(const PipelineConfig& cfg);

// --- artifact layout ----------------------------------------------------------

struct Layout {
  std::filesystem::path root;
  std::filesystem::path corpus() const { return root / "corpus"; }
  std::filesystem::path ckpt(const std::string& stage) const { return root / "ckpt" / (stage + ".ckpt"); }
  std::filesystem::path store() const { return root / "ckpt" / "embeddings.t2lemb"; }
  std::filesystem::path pairs() const { return root / "pairs" / "train.t2lpair"; }
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// `<output>.manifest.txt` holding `key=value` lines.
std::filesystem::path sidecar_path(const std::filesystem::path& output);
void write_sidecar(const std::filesystem::path& output, const KeyValues& kv);
std::map<std::string, std::string> read_sidecar(const std::filesystem::path& output);

// --- commands -----------------------------------------------------------------

void prepare_data(const PipelineConfig& cfg);
/// Trains both tokenizers; returns final reconstruction MSE (global, local).
std::pair<double, double> train_codebooks(const PipelineConfig& cfg);
/// Returns the mean NLL over the last tenth of the steps.
double train_global_stage(const PipelineConfig& cfg);
double train_local_stage(const PipelineConfig& cfg);
double train_sritmo_stage(const PipelineConfig& cfg);

struct Generation {
  vq::TokenGrid global;  // empty under no_global
  samplers::PanoramaOutput panorama;
};

/// text -> embedding -> global tokens -> sliding-window local tokens -> PNG.
Generation generate(const PipelineConfig& cfg, const std::string& text, std::uint64_t seed,
                    const std::filesystem::path& out);

/// Re-samples the global tokens in token columns [col_begin, col_end) of a
/// previous generation (read from its sidecar) under `text`, then reruns the
/// local stage.
Generation edit(const PipelineConfig& cfg, const std::filesystem::path& source,
                const std::string& text, int col_begin, int col_end, std::uint64_t seed,
                const std::filesystem::path& out);

/// SR-iTMO over a whole panorama; writes `.hdr` and an EV 0 PNG preview.
HdrImage upscale_image(const PipelineConfig& cfg, const std::filesystem::path& input,
                       double factor, const std::filesystem::path& out);

// --- evaluation ---------------------------------------------------------------

/// Mean |pred - gt| over all pixels and channels.
double mae(const HdrImage& pred, const HdrImage& gt);
/// sqrt of the mean squared difference.
double rmse(const HdrImage& pred, const HdrImage& gt);

struct ItmoScores {
  double mae = 0;
  double rmse = 0;
  std::size_t images = 0;
};
/// Manifest lines `<pred.hdr> <gt.hdr>`, paths relative to the manifest;
/// blank lines and `#` comments are skipped. Scores pool every pixel.
ItmoScores eval_itmo(const std::filesystem::path& manifest);

}  // namespace t2l::pipeline
