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

// Vector-quantized image tokenizers: a conv encoder, a nearest-entry
// codebook and a mirrored conv decoder. The global tokenizer pads the width
// axis circularly so that panoramas stay seamless.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "t2l/autodiff.hpp"
#include "t2l/nn.hpp"
#include "t2l/raster.hpp"

T2L_NN_BEGIN
namespace vq {

using ad::Tensor;

struct TokenGrid {
  int rows = 0;
  int cols = 0;
  std::vector<int> indices;  // row-major

  TokenGrid() = default;
  TokenGrid(int r, int c) : rows(r), cols(c), indices(static_cast<std::size_t>(r) * c, 0) {}
  int& at(int r, int c) { return indices[static_cast<std::size_t>(r) * cols + c]; }
  int at(int r, int c) const { return indices[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const TokenGrid&) const = default;
};

/// Index of the nearest table row for each of the `n` query rows, by squared
/// Euclidean distance; ties go to the lowest index.
std::vector<int> nearest_entries(std::span<const Real> queries, std::span<const Real> table,
                                 int dim);

struct Quantized {
  Tensor zq;                 // [n, dim], rows of the table (gradient flows to it)
  std::vector<int> indices;  // [n]
};
/// z_hat rows [n, dim] against table [K, dim].
Quantized quantize(const Tensor& z_hat, const Tensor& table);

struct LossParts {
  Tensor total;
  Real rec = 0;       // mean |I_hat - I|
  Real codebook = 0;  // mean over positions of |sg(z_q) - z_hat|^2
  Real commit = 0;    // mean over positions of |sg(z_hat) - z_q|^2
  std::vector<int> indices;
  Tensor z_hat;  // encoder output rows
  Tensor recon;  // [N,3,H,W]
};

/// L_rec + |sg(z_q) - z_hat|^2 + beta |sg(z_hat) - z_q|^2, squared distances
/// summed over channels and averaged over positions. The decoder sees
/// straight_through(z_q, z_hat).
LossParts vq_loss(const Tensor& images, const Tensor& z_hat_rows, const Tensor& table,
                  Real beta, const std::function<Tensor(const Tensor&)>& decode_rows);

struct TokenizerConfig {
  int height = 32;
  int width = 64;
  int stages = 3;  // each halves both axes
  int base_channels = 16;
  int max_channels = 64;
  int code_dim = 64;
  int codebook_size = 256;
  bool circular = false;
  Real beta = 0.25;
  int dead_after = 200;  // steps without use before an entry is reseeded

  int factor() const { return 1 << stages; }
  int token_rows() const { return height / factor(); }
  int token_cols() const { return width / factor(); }
};

class Tokenizer {
 public:
  Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed);

  const TokenizerConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const Tensor& codebook() const { return codebook_; }

  /// [N,3,H,W] -> [N,code_dim,h,w]
  Tensor encode_latent(const Tensor& x) const;
  /// [N,code_dim,h,w] -> [N,3,H,W]
  Tensor decode_latent(const Tensor& z) const;
  /// Full loss on a batch [N,3,H,W].
  LossParts loss(const Tensor& images) const;

  TokenGrid encode(const LdrImage& img) const;
  /// Decoded values are clamped into [0,1].
  LdrImage decode(const TokenGrid& tokens) const;
  /// Decodes a grid of any size (the decoder is fully convolutional); used to
  /// render a full panorama from assembled patch tokens.
  LdrImage decode_grid(const TokenGrid& tokens) const;
  /// encode() over several images at once.
  std::vector<TokenGrid> encode_batch(std::span<const LdrImage> imgs) const;

 private:
  TokenizerConfig cfg_;
  ad::ParamStore params_;
  std::vector<nn::Conv2d> enc_;
  nn::Conv2d enc_out_;
  nn::Conv2d dec_in_;
  std::vector<nn::Conv2d> dec_;
  nn::Conv2d dec_out_;
  Tensor codebook_;
};

/// [1,3,H,W] tensor of an image and back.
Tensor image_to_tensor(const LdrImage& img);
Tensor images_to_tensor(std::span<const LdrImage> imgs);
LdrImage tensor_to_image(const Tensor& t, int index = 0);

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  double lr = 2e-3;
  std::uint64_t seed = 1;
  bool data_init = true;  // first batch's encoder outputs seed the codebook
  bool cosine = true;     // lr decays along a half cosine to 0.1 lr
};

struct TrainLog {
  std::vector<Real> loss;
  std::vector<Real> rec;
  int reseeded = 0;
};

/// Adam on the whole loss; minibatches are drawn with a seeded stream, and
/// entries unused for `dead_after` consecutive steps are moved onto a random
/// encoder output of the current batch.
TrainLog train_tokenizer(Tokenizer& tok, std::span<const LdrImage> data, const TrainConfig& cfg);

/// Mean squared error of decode(encode(x)) against x over a set.
double reconstruction_mse(const Tokenizer& tok, std::span<const LdrImage> data);

}  // namespace vq
T2L_NN_END
