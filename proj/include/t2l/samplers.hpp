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

// Autoregressive token samplers: a decoder-only transformer, the
// text-conditioned global sampler, the SPE-conditioned local sampler and
// sliding-window panorama synthesis.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "t2l/autodiff.hpp"
#include "t2l/contrastive.hpp"
#include "t2l/embedding.hpp"
#include "t2l/sphere.hpp"
#include "t2l/vq.hpp"

T2L_NN_BEGIN
namespace samplers {

using ad::Tensor;
using vq::TokenGrid;

struct TransformerConfig {
  int layers = 2;
  int heads = 4;
  int width = 128;
  int context = 256;
};

/// Pre-norm decoder-only transformer over [condition tokens | token
/// sequence]. Condition tokens arrive already embedded; the last condition
/// position predicts the first token.
class CausalTransformer {
 public:
  CausalTransformer() = default;
  CausalTransformer(ad::ParamStore& ps, const std::string& prefix, const TransformerConfig& cfg,
                    int vocab, Rng& rng);

  const TransformerConfig& config() const { return cfg_; }
  int vocab() const { return vocab_; }

  /// cond [B, C, W] with C >= 1; `tokens` holds B rows of n targets. Returns
  /// logits [B*n, vocab] where row b*n+i sees cond and tokens[b][0..i).
  Tensor logits(const Tensor& cond, std::span<const int> tokens, int n) const;

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::Linear qkv, proj, fc1, fc2;
  };
  TransformerConfig cfg_;
  int vocab_ = 0;
  Tensor tok_emb_;  // [vocab, W]
  Tensor pos_emb_;  // [context, W]
  std::vector<Block> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear head_;
};

struct SampleConfig {
  double temperature = 1.0;  ///< <= 0 selects greedy argmax decoding
  int top_k = 100;           ///< clamped to the vocabulary; <= 0 disables truncation
  std::uint64_t seed = 0;
};

struct SamplerOutput {
  TokenGrid grid;
  std::vector<double> logprobs;  ///< model log-probability of each emitted token
};

/// Draws one index from `logits`. Greedy when temperature <= 0.
int sample_index(std::span<const Real> logits, const SampleConfig& cfg, Rng& rng);

struct TrainSchedule {
  int steps = 300;
  int batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

// --- global sampler ------------------------------------------------------------

struct GlobalConfig {
  TransformerConfig transformer;
  int knn = embedding::kDefaultK;
  bool no_knn = false;  ///< condition is the text slot alone
  double alpha = embedding::kDefaultAlpha;
  double tau = contrastive::kDefaultTau;
  double con_weight = 1.0;
};

struct GlobalExample {
  TokenGrid tokens;                  ///< global grid of the panorama
  embedding::Vector image_embedding;  ///< E_img of the panorama
};

struct GlobalLoss {
  Tensor total;
  double nll = 0;  ///< mean nats per token
  double con = 0;  ///< contrastive term (0 for a batch of one)
};

class GlobalSampler {
 public:
  GlobalSampler(const GlobalConfig& cfg, int vocab, int rows, int cols, int cond_dim,
                std::uint64_t seed);

  const GlobalConfig& config() const { return cfg_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int vocab() const { return tf_.vocab(); }
  int cond_dim() const { return cond_dim_; }
  int condition_length() const { return cfg_.no_knn ? 1 : cfg_.knn + 1; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Training condition: pseudo text feature of the image embedding in the
  /// text slot, KNN retrieved with it as the query.
  embedding::ConditionBundle training_condition(std::span<const float> image_embedding,
                                                const embedding::EmbeddingStore& store,
                                                Rng& rng) const;
  /// Inference / evaluation condition with `text` in the text slot.
  embedding::ConditionBundle condition(std::span<const float> text,
                                       const embedding::EmbeddingStore& store) const;

  /// Projected condition tokens [B, C, W].
  Tensor project(std::span<const embedding::ConditionBundle> conds) const;

  /// NLL of the grids plus the weighted contrastive term through the
  /// projection head.
  GlobalLoss loss(std::span<const GlobalExample> batch,
                  std::span<const embedding::ConditionBundle> conds) const;

  /// Entries of `frozen` >= 0 (row-major, rows*cols long, or empty) are kept.
  SamplerOutput sample(const embedding::ConditionBundle& cond, const SampleConfig& cfg,
                       std::span<const int> frozen = {}) const;

  /// Fraction of tokens whose argmax under ground-truth prefixes is correct.
  double teacher_forced_accuracy(std::span<const GlobalExample> data,
                                 std::span<const embedding::ConditionBundle> conds) const;

 private:
  void check_bundle(const embedding::ConditionBundle& b) const;

  GlobalConfig cfg_;
  int rows_, cols_, cond_dim_;
  ad::ParamStore params_;
  nn::Linear cond_head_;
  CausalTransformer tf_;
};

struct GlobalStep {
  double total = 0, nll = 0, con = 0;
};

/// One optimizer step on `batch`. Throws DomainError when KNN conditioning is
/// on and the store holds fewer than K entries.
GlobalStep global_train_step(GlobalSampler& s, ad::Adam& opt, std::span<const GlobalExample> batch,
                             const embedding::EmbeddingStore& store, Rng& rng);

std::vector<GlobalStep> train_global(GlobalSampler& s, std::span<const GlobalExample> data,
                                     const embedding::EmbeddingStore& store,
                                     const TrainSchedule& sched);

// --- local sampler -------------------------------------------------------------

struct LocalConfig {
  TransformerConfig transformer;
  int octaves = 4;
  bool no_sp = false;   ///< drop the spherical position tokens altogether
  bool no_spe = false;  ///< keep raw (theta, phi) but zero the Fourier channels
};

struct LocalExample {
  TokenGrid tokens;      ///< window of the local lattice
  TokenGrid global;      ///< holistic condition z_g
  sphere::SpeGrid spe;   ///< one encoding per window token
};

class LocalSampler {
 public:
  LocalSampler(const LocalConfig& cfg, int vocab, int global_vocab, int window_rows,
               int window_cols, int global_rows, int global_cols, std::uint64_t seed);

  const LocalConfig& config() const { return cfg_; }
  int vocab() const { return tf_.vocab(); }
  int window_rows() const { return wr_; }
  int window_cols() const { return wc_; }
  int condition_length() const;
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Condition tokens [B, C, W]: embedded z_g followed by projected SPE.
  Tensor condition(std::span<const TokenGrid> globals, std::span<const sphere::SpeGrid> spes) const;

  /// Mean NLL in nats per token.
  Tensor loss(std::span<const LocalExample> batch) const;

  /// Samples a window; entries of `frozen` >= 0 are kept as given.
  SamplerOutput sample_window(const TokenGrid& global, const sphere::SpeGrid& spe,
                              std::span<const int> frozen, const SampleConfig& cfg,
                              Rng& rng) const;
  SamplerOutput sample(const TokenGrid& global, const sphere::SpeGrid& spe,
                       const SampleConfig& cfg) const;

 private:
  void check_example(const TokenGrid& global, const sphere::SpeGrid& spe) const;

  LocalConfig cfg_;
  int wr_, wc_, gr_, gc_;
  ad::ParamStore params_;
  Tensor global_emb_;  // [global_vocab, W]
  nn::Linear spe_head_;
  CausalTransformer tf_;
};

std::vector<double> train_local(LocalSampler& s, std::span<const LocalExample> data,
                                const TrainSchedule& sched);

/// SPE of the window whose top-left token is (row, col) on a lattice with
/// `factor` pixels per token over an H x W panorama.
sphere::SpeGrid window_spe(int row, int col, int window_rows, int window_cols, int factor,
                           int pano_h, int pano_w, int octaves = 4);

/// Window origins along one axis: 0, stride, ... covering `extent`. With
/// `wrap` the origins run up to extent - stride and windows wrap around;
/// without it the last origin is extent - window.
std::vector<int> window_origins(int extent, int window, int stride, bool wrap);

/// Every window of the panorama's local lattice, encoded by `local`.
std::vector<LocalExample> local_examples(const LdrImage& pano, const TokenGrid& global,
                                         const vq::Tokenizer& local, int stride, int octaves = 4);

struct PanoramaOutput {
  TokenGrid grid;  ///< assembled local lattice
  LdrImage image;  ///< decode_grid(grid)
};

/// Sliding-window synthesis of the full local lattice (pano_h / f x pano_w / f
/// tokens), left to right and top to bottom. Tokens produced by earlier
/// windows are frozen context for later ones.
PanoramaOutput generate_panorama(const TokenGrid& global, const LocalSampler& sampler,
                                 const vq::Tokenizer& local, int pano_h, int pano_w, int stride,
                                 const SampleConfig& cfg);

}  // namespace samplers
T2L_NN_END
