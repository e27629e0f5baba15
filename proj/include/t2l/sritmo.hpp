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

// Joint super-resolution and inverse tone mapping: a pixel-aligned latent
// grid over an LDR patch, area-weighted interpolation at arbitrary sphere
// coordinates, and two MLPs for the LDR and log-HDR branches.

#include <array>
#include <functional>
#include <cstdint>
#include <span>
#include <vector>

#include "t2l/autodiff.hpp"
#include "t2l/datapipe.hpp"
#include "t2l/nn.hpp"
#include "t2l/raster.hpp"
#include "t2l/sphere.hpp"

T2L_NN_BEGIN
namespace sritmo {

using ad::Tensor;

/// Four anchors and their weights. Anchor (i, j) of a rows x cols grid has
/// flat index i * cols + j.
struct Stencil {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
};

/// Area weights at local position (u along columns, v along rows) in anchor
/// units, anchor (i, j) sitting at (u, v) = (j, i). Each anchor is weighted
/// by the area of the rectangle spanned by the query and the diagonally
/// opposite anchor, normalized by the total. Positions outside the grid clamp
/// to its border.
Stencil area_weights(double u, double v, int rows, int cols);

struct LocalPos {
  double u = 0;
  double v = 0;
};

/// Local anchor coordinates of `q` for a rows x cols grid spread evenly over
/// the panorama region `extent` (pixel centers of the grid map to anchors).
LocalPos local_position(const sphere::SphereCoord& q, const sphere::PatchGeometry& extent, int rows,
                        int cols);
sphere::SphereCoord anchor_coord(int i, int j, const sphere::PatchGeometry& extent, int rows,
                                 int cols);

struct LatentGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<Real> values;  // rows x cols x dim
  sphere::PatchGeometry extent;

  std::span<const Real> code(int i, int j) const {
    return {values.data() + (static_cast<std::size_t>(i) * cols + j) * dim,
            static_cast<std::size_t>(dim)};
  }
  sphere::SphereCoord anchor(int i, int j) const { return anchor_coord(i, j, extent, rows, cols); }
};

std::vector<Real> interpolate(const LatentGrid& grid, const sphere::SphereCoord& q);

struct SrItmoConfig {
  int latent_dim = 64;  ///< c_z'
  int encoder_layers = 8;
  int encoder_width = 64;
  int sr_layers = 4;
  int sr_hidden = 256;
  int itmo_layers = 2;
  int itmo_hidden = 256;
  /// Ablation: one MLP maps [z_c, theta, phi] to LDR and log-HDR together.
  bool single_mlp = false;
};

struct QueryOut {
  Tensor ldr;     ///< [n, 3] raw LDR prediction (clamped only at inference)
  Tensor c_hr;    ///< [n, sr_hidden] post-activation output of f_sr layer 2
  Tensor log_hdr; ///< [n, 3]
};

class SrItmoModel {
 public:
  SrItmoModel(const SrItmoConfig& cfg, std::uint64_t seed);

  const SrItmoConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// images [B, 3, h, w] -> latents [B, c_z', h, w].
  Tensor encode(const Tensor& images) const;
  LatentGrid encode_latents(const LdrImage& patch, const sphere::PatchGeometry& extent) const;

  /// f_sr on z [n, c_z']: LDR [n, 3] and c_hr.
  std::pair<Tensor, Tensor> query_sr(const Tensor& z) const;
  /// f_itmo on [c_hr | theta, phi]; coords [n, 2]. Returns log-HDR [n, 3].
  Tensor query_hdr(const Tensor& c_hr, const Tensor& coords) const;
  /// Both branches (or the single MLP under the ablation).
  QueryOut query(const Tensor& z, const Tensor& coords) const;

 private:
  SrItmoConfig cfg_;
  ad::ParamStore params_;
  nn::Conv2d enc_in_, enc_out_;
  std::vector<std::pair<nn::Conv2d, nn::Conv2d>> enc_blocks_;
  std::vector<nn::Linear> sr_, itmo_;
};

/// (1/n) sum over samples of the L1 norm of the RGB error.
Tensor loss_sr(const Tensor& pred, std::span<const Real> gt);
/// Variance of D = log(pred) - log(gt) over all entries. pred must be > 0;
/// gt zeros are clamped to 1e-6, negative gt is a domain error.
Tensor loss_itmo(const Tensor& pred_hdr, std::span<const Real> gt_hdr);
/// Same with the prediction already in log space.
Tensor loss_itmo_log(const Tensor& pred_log, std::span<const Real> gt_hdr);

struct SrTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct SrStep {
  double total = 0, sr = 0, itmo = 0;
};

/// Joint loss L_sr + L_itmo of a batch of pairs with equal LR size; L_itmo is
/// averaged over the pairs (each pair has its own radiance scale).
struct SrLoss {
  Tensor total;
  double sr = 0, itmo = 0;
};
SrLoss pair_loss(const SrItmoModel& m, std::span<const data::ScenePair> batch);

std::vector<SrStep> train_sritmo(SrItmoModel& m, std::span<const data::ScenePair> pairs,
                                 const SrTrainConfig& cfg);

struct Upscaled {
  LdrImage ldr;
  HdrImage hdr;
};

/// Queries a round(h * factor) x round(w * factor) lattice over `extent`.
Upscaled upscale(const SrItmoModel& m, const LdrImage& ldr, double factor,
                 const sphere::PatchGeometry& extent);
/// Whole-panorama form: the extent is the image itself.
Upscaled upscale(const SrItmoModel& m, const LdrImage& ldr, double factor);

/// Predictions at the sample coordinates of one pair.
struct PairPrediction {
  std::vector<float> ldr;  // clamped to [0, 1]
  std::vector<float> hdr;  // exp of the log branch
};
PairPrediction predict_pair(const SrItmoModel& m, const data::ScenePair& pair);
/// Baseline: bilinear LDR at the sample coordinates, reused as radiance.
PairPrediction bilinear_baseline(const data::ScenePair& pair);

double psnr(std::span<const float> pred, std::span<const float> gt);
/// RMSE of log(pred) - log(gt) after the optimal global log offset.
double aligned_log_rmse(std::span<const float> pred, std::span<const float> gt);

struct SrMetrics {
  double psnr = 0;      ///< mean over pairs
  double log_rmse = 0;  ///< mean over pairs
  bool finite = true;
};
SrMetrics evaluate(std::span<const data::ScenePair> pairs,
                   const std::function<PairPrediction(const data::ScenePair&)>& predict);

}  // namespace sritmo
T2L_NN_END
