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

#include "t2l/sritmo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "t2l/vq.hpp"

T2L_NN_BEGIN
namespace sritmo {

namespace {

constexpr double kLogFloor = 1e-6;
constexpr int kQueryChunk = 8192;

double positive_mod(double x, double m) {
  const double r = std::fmod(x, m);
  return r < 0 ? r + m : r;
}

Tensor relu_mlp(const std::vector<nn::Linear>& layers, Tensor x, int stop_after, Tensor* tap,
                int tap_layer) {
  for (int l = 0; l < stop_after; ++l) {
    x = layers[static_cast<std::size_t>(l)](x);
    if (l + 1 < static_cast<int>(layers.size())) x = ad::relu(x);
    if (tap && l + 1 == tap_layer) *tap = x;
  }
  return x;
}

Tensor coords_tensor(std::span<const sphere::SphereCoord> coords) {
  std::vector<Real> v;
  v.reserve(coords.size() * 2);
  for (const auto& c : coords) {
    v.push_back(static_cast<Real>(c.theta));
    v.push_back(static_cast<Real>(c.phi));
  }
  return Tensor::from({static_cast<int>(coords.size()), 2}, std::move(v));
}

void append_stencil(const Stencil& s, int offset, std::vector<int>& idx, std::vector<Real>& w) {
  for (int k = 0; k < 4; ++k) {
    idx.push_back(offset + s.index[k]);
    w.push_back(static_cast<Real>(s.weight[k]));
  }
}

}  // namespace

Stencil area_weights(double u, double v, int rows, int cols) {
  if (rows < 2 || cols < 2) throw DomainError("area_weights: grid must be at least 2x2");
  u = std::clamp(u, 0.0, static_cast<double>(cols - 1));
  v = std::clamp(v, 0.0, static_cast<double>(rows - 1));
  const int j0 = std::min(static_cast<int>(std::floor(u)), cols - 2);
  const int i0 = std::min(static_cast<int>(std::floor(v)), rows - 2);
  const std::array<int, 4> ii{i0, i0, i0 + 1, i0 + 1};
  const std::array<int, 4> jj{j0, j0 + 1, j0, j0 + 1};
  Stencil s;
  double total = 0;
  for (int k = 0; k < 4; ++k) {
    // The diagonal partner of anchor k is anchor 3 - k.
    const double area = std::abs(u - jj[3 - k]) * std::abs(v - ii[3 - k]);
    s.index[k] = ii[k] * cols + jj[k];
    s.weight[k] = area;
    total += area;
  }
  for (auto& w : s.weight) w /= total;
  return s;
}

LocalPos local_position(const sphere::SphereCoord& q, const sphere::PatchGeometry& e, int rows,
                        int cols) {
  const auto p = sphere::sphere_to_pixel(q, e.pano_h, e.pano_w);
  const double pw = static_cast<double>(e.pano_w);
  // Offset from the patch's left edge, wrapped so the gap outside the patch
  // splits evenly between its two sides.
  double x = positive_mod(p.col - static_cast<double>(e.origin_col) + 0.5, pw);
  if (x > static_cast<double>(e.patch_w) + (pw - static_cast<double>(e.patch_w)) / 2) x -= pw;
  const double y = p.row - static_cast<double>(e.origin_row) + 0.5;
  return {x / static_cast<double>(e.patch_w) * cols - 0.5, y / static_cast<double>(e.patch_h) * rows - 0.5};
}

sphere::SphereCoord anchor_coord(int i, int j, const sphere::PatchGeometry& e, int rows, int cols) {
  const double row = static_cast<double>(e.origin_row) - 0.5 +
                     (i + 0.5) * static_cast<double>(e.patch_h) / rows;
  const double col = static_cast<double>(e.origin_col) - 0.5 +
                     (j + 0.5) * static_cast<double>(e.patch_w) / cols;
  return sphere::fractional_pixel_to_sphere(row, col, e.pano_h, e.pano_w);
}

std::vector<Real> interpolate(const LatentGrid& grid, const sphere::SphereCoord& q) {
  const auto lp = local_position(q, grid.extent, grid.rows, grid.cols);
  const auto s = area_weights(lp.u, lp.v, grid.rows, grid.cols);
  std::vector<Real> out(static_cast<std::size_t>(grid.dim), Real(0));
  for (int k = 0; k < 4; ++k) {
    const Real* z = grid.values.data() + static_cast<std::size_t>(s.index[k]) * grid.dim;
    for (int c = 0; c < grid.dim; ++c) out[c] += static_cast<Real>(s.weight[k]) * z[c];
  }
  return out;
}

// --- model -----------------------------------------------------------------------------

SrItmoModel::SrItmoModel(const SrItmoConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.encoder_layers < 2 || cfg.encoder_layers % 2 != 0) {
    throw DomainError("sritmo: encoder depth must be even and at least 2");
  }
  if (cfg.sr_layers < 3 || cfg.itmo_layers < 1 || cfg.latent_dim < 1) {
    throw DomainError("sritmo: f_sr needs at least 3 layers, f_itmo at least 1");
  }
  Rng rng(seed);
  const ad::Conv2dOptions same{1, 1, false};
  const int w = cfg.encoder_width;
  enc_in_ = nn::Conv2d(params_, "enc.in", 3, w, 3, same, rng);
  for (int b = 0; b < (cfg.encoder_layers - 2) / 2; ++b) {
    const std::string p = "enc.block" + std::to_string(b);
    nn::Conv2d c1(params_, p + ".conv1", w, w, 3, same, rng);
    nn::Conv2d c2(params_, p + ".conv2", w, w, 3, same, rng);
    for (auto& x : c2.weight.data()) x *= Real(0.1);  // residual branch starts small
    enc_blocks_.emplace_back(std::move(c1), std::move(c2));
  }
  enc_out_ = nn::Conv2d(params_, "enc.out", w, cfg.latent_dim, 3, same, rng);

  const int h = cfg.sr_hidden;
  if (cfg.single_mlp) {
    int in = cfg.latent_dim + 2;
    for (int l = 0; l < cfg.sr_layers; ++l) {
      const int out = l + 1 == cfg.sr_layers ? 6 : h;
      sr_.emplace_back(params_, "mlp.l" + std::to_string(l), in, out, rng);
      in = out;
    }
  } else {
    int in = cfg.latent_dim;
    for (int l = 0; l < cfg.sr_layers; ++l) {
      const int out = l + 1 == cfg.sr_layers ? 3 : h;
      sr_.emplace_back(params_, "sr.l" + std::to_string(l), in, out, rng);
      in = out;
    }
    in = h + 2;
    for (int l = 0; l < cfg.itmo_layers; ++l) {
      const int out = l + 1 == cfg.itmo_layers ? 3 : cfg.itmo_hidden;
      itmo_.emplace_back(params_, "itmo.l" + std::to_string(l), in, out, rng);
      in = out;
    }
  }
  // Output biases start at mid-gray and at log(0.5).
  auto& last = sr_.back().bias;
  for (int c = 0; c < 3; ++c) last.data()[c] = Real(0.5);
  auto& hdr_bias = cfg.single_mlp ? sr_.back().bias : itmo_.back().bias;
  for (int c = 0; c < 3; ++c) hdr_bias.data()[hdr_bias.numel() - 3 + c] = static_cast<Real>(std::log(0.5));
}

Tensor SrItmoModel::encode(const Tensor& images) const {
  Tensor h = ad::relu(enc_in_(ad::add_scalar(images, Real(-0.5))));
  for (const auto& [c1, c2] : enc_blocks_) h = ad::add(h, c2(ad::relu(c1(h))));
  return enc_out_(h);
}

LatentGrid SrItmoModel::encode_latents(const LdrImage& patch, const sphere::PatchGeometry& extent) const {
  if (patch.height() < 2 || patch.width() < 2) throw DomainError("encode_latents: patch below 2x2");
  ad::NoGradGuard guard;
  const auto rows = nn::nchw_to_rows(encode(vq::image_to_tensor(patch)));
  LatentGrid g;
  g.rows = patch.height();
  g.cols = patch.width();
  g.dim = cfg_.latent_dim;
  g.values.assign(rows.data().begin(), rows.data().end());
  g.extent = extent;
  return g;
}

std::pair<Tensor, Tensor> SrItmoModel::query_sr(const Tensor& z) const {
  if (cfg_.single_mlp) throw DomainError("query_sr: the single-MLP ablation has no separate f_sr");
  Tensor c_hr;
  const auto out = relu_mlp(sr_, z, static_cast<int>(sr_.size()), &c_hr, 2);
  return {out, c_hr};
}

Tensor SrItmoModel::query_hdr(const Tensor& c_hr, const Tensor& coords) const {
  if (cfg_.single_mlp) throw DomainError("query_hdr: the single-MLP ablation has no separate f_itmo");
  return relu_mlp(itmo_, ad::concat({c_hr, coords}, 1), static_cast<int>(itmo_.size()), nullptr, 0);
}

QueryOut SrItmoModel::query(const Tensor& z, const Tensor& coords) const {
  QueryOut q;
  if (cfg_.single_mlp) {
    const auto out = relu_mlp(sr_, ad::concat({z, coords}, 1), static_cast<int>(sr_.size()), &q.c_hr, 2);
    q.ldr = ad::slice(out, 1, 0, 3);
    q.log_hdr = ad::slice(out, 1, 3, 6);
    return q;
  }
  std::tie(q.ldr, q.c_hr) = query_sr(z);
  q.log_hdr = query_hdr(q.c_hr, coords);
  return q;
}

// --- losses ------------------------------------------------------------------------------

Tensor loss_sr(const Tensor& pred, std::span<const Real> gt) {
  if (pred.ndim() != 2 || pred.dim(1) != 3) throw ShapeError("loss_sr: prediction must be [n, 3]");
  const int n = pred.dim(0);
  if (n == 0) throw DomainError("loss_sr: no samples");
  if (gt.size() != pred.numel()) throw ShapeError("loss_sr: ground truth size mismatch");
  const auto diff = ad::sub(pred, Tensor::from(pred.shape(), std::vector<Real>(gt.begin(), gt.end())));
  return ad::scale(ad::sum(ad::abs(diff)), Real(1) / static_cast<Real>(n));
}

Tensor loss_itmo_log(const Tensor& pred_log, std::span<const Real> gt_hdr) {
  if (pred_log.numel() < 2) throw DomainError("loss_itmo: needs at least two values");
  if (gt_hdr.size() != pred_log.numel()) throw ShapeError("loss_itmo: ground truth size mismatch");
  std::vector<Real> lg(gt_hdr.size());
  for (std::size_t k = 0; k < gt_hdr.size(); ++k) {
    if (!(gt_hdr[k] >= 0)) throw DomainError("loss_itmo: negative or NaN ground truth");
    lg[k] = static_cast<Real>(std::log(std::max<double>(gt_hdr[k], kLogFloor)));
  }
  return ad::var(ad::sub(pred_log, Tensor::from(pred_log.shape(), std::move(lg))));
}

Tensor loss_itmo(const Tensor& pred_hdr, std::span<const Real> gt_hdr) {
  for (Real v : pred_hdr.data()) {
    if (!(v > 0)) throw DomainError("loss_itmo: predictions must be positive");
  }
  return loss_itmo_log(ad::log(pred_hdr), gt_hdr);
}

SrLoss pair_loss(const SrItmoModel& m, std::span<const data::ScenePair> batch) {
  if (batch.empty()) throw DomainError("pair_loss: empty batch");
  std::vector<LdrImage> imgs;
  for (const auto& p : batch) imgs.push_back(p.ldr_lr);
  const int h = imgs[0].height(), w = imgs[0].width();
  const auto table = nn::nchw_to_rows(m.encode(vq::images_to_tensor(imgs)));
  std::vector<int> idx;
  std::vector<Real> wts, gt_ldr;
  std::vector<sphere::SphereCoord> coords;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& p = batch[b];
    const auto geo = p.geometry();
    for (const auto& q : p.coords) {
      const auto lp = local_position(q, geo, h, w);
      append_stencil(area_weights(lp.u, lp.v, h, w), static_cast<int>(b) * h * w, idx, wts);
    }
    coords.insert(coords.end(), p.coords.begin(), p.coords.end());
    gt_ldr.insert(gt_ldr.end(), p.ldr.begin(), p.ldr.end());
  }
  const auto z = ad::weighted_gather(table, idx, wts, 4);
  const auto q = m.query(z, coords_tensor(coords));
  SrLoss out;
  const auto lsr = loss_sr(q.ldr, gt_ldr);
  Tensor litmo;
  int start = 0;
  for (const auto& p : batch) {
    const int n = static_cast<int>(p.samples());
    const std::vector<Real> gt(p.hdr.begin(), p.hdr.end());
    const auto l = loss_itmo_log(ad::slice(q.log_hdr, 0, start, start + n), gt);
    litmo = litmo.defined() ? ad::add(litmo, l) : l;
    start += n;
  }
  litmo = ad::scale(litmo, Real(1) / static_cast<Real>(batch.size()));
  out.sr = lsr.item();
  out.itmo = litmo.item();
  out.total = ad::add(lsr, litmo);
  return out;
}

std::vector<SrStep> train_sritmo(SrItmoModel& m, std::span<const data::ScenePair> pairs,
                                 const SrTrainConfig& cfg) {
  if (pairs.empty()) throw DomainError("train_sritmo: empty dataset");
  Rng rng(cfg.seed);
  ad::Adam opt(m.params().tensors(), {cfg.lr});
  const std::size_t batch = static_cast<std::size_t>(std::clamp<long>(cfg.batch, 1, static_cast<long>(pairs.size())));
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  std::vector<SrStep> log;
  for (int step = 0; step < cfg.steps; ++step) {
    // Cosine decay to a tenth of the base rate.
    const double t = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    opt.set_lr(cfg.lr * (0.1 + 0.45 * (1 + std::cos(std::acos(-1.0) * t))));
    std::vector<data::ScenePair> b;
    while (b.size() < batch) {
      if (pos == order.size()) {
        order.resize(pairs.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[uniform_index(rng, k)]);
        pos = 0;
      }
      b.push_back(pairs[order[pos++]]);
    }
    opt.zero_grad();
    const auto l = pair_loss(m, b);
    l.total.backward();
    opt.step();
    log.push_back({l.total.item(), l.sr, l.itmo});
  }
  return log;
}

// --- inference ---------------------------------------------------------------------------

namespace {

// Runs the query pipeline for `coords` against one encoded LR image.
PairPrediction run_queries(const SrItmoModel& m, const LdrImage& lr, const sphere::PatchGeometry& geo,
                           std::span<const sphere::SphereCoord> coords) {
  ad::NoGradGuard guard;
  const int h = lr.height(), w = lr.width();
  const auto table = nn::nchw_to_rows(m.encode(vq::image_to_tensor(lr)));
  PairPrediction out;
  out.ldr.reserve(coords.size() * 3);
  out.hdr.reserve(coords.size() * 3);
  for (std::size_t start = 0; start < coords.size(); start += kQueryChunk) {
    const auto chunk = coords.subspan(start, std::min<std::size_t>(kQueryChunk, coords.size() - start));
    std::vector<int> idx;
    std::vector<Real> wts;
    for (const auto& q : chunk) {
      const auto lp = local_position(q, geo, h, w);
      append_stencil(area_weights(lp.u, lp.v, h, w), 0, idx, wts);
    }
    const auto q = m.query(ad::weighted_gather(table, idx, wts, 4), coords_tensor(chunk));
    for (Real v : q.ldr.data()) out.ldr.push_back(std::clamp(static_cast<float>(v), 0.0f, 1.0f));
    for (Real v : q.log_hdr.data()) out.hdr.push_back(static_cast<float>(std::exp(static_cast<double>(v))));
  }
  return out;
}

}  // namespace

Upscaled upscale(const SrItmoModel& m, const LdrImage& ldr, double factor,
                 const sphere::PatchGeometry& extent) {
  if (!(factor >= 1)) throw DomainError("upscale: factor must be >= 1");
  if (ldr.height() < 2 || ldr.width() < 2) throw DomainError("upscale: image below 2x2");
  const int ho = static_cast<int>(std::lround(ldr.height() * factor));
  const int wo = static_cast<int>(std::lround(ldr.width() * factor));
  std::vector<sphere::SphereCoord> coords;
  coords.reserve(static_cast<std::size_t>(ho) * wo);
  for (int i = 0; i < ho; ++i) {
    for (int j = 0; j < wo; ++j) {
      const double row = static_cast<double>(extent.origin_row) - 0.5 +
                         (i + 0.5) * static_cast<double>(extent.patch_h) / ho;
      const double col = static_cast<double>(extent.origin_col) - 0.5 +
                         (j + 0.5) * static_cast<double>(extent.patch_w) / wo;
      coords.push_back(sphere::fractional_pixel_to_sphere(row, col, extent.pano_h, extent.pano_w));
    }
  }
  const auto pred = run_queries(m, ldr, extent, coords);
  Upscaled out{LdrImage(ho, wo), HdrImage(ho, wo)};
  std::copy(pred.ldr.begin(), pred.ldr.end(), out.ldr.values().begin());
  std::copy(pred.hdr.begin(), pred.hdr.end(), out.hdr.values().begin());
  return out;
}

Upscaled upscale(const SrItmoModel& m, const LdrImage& ldr, double factor) {
  return upscale(m, ldr, factor,
                 sphere::PatchGeometry{0, 0, ldr.height(), ldr.width(), ldr.height(), ldr.width()});
}

PairPrediction predict_pair(const SrItmoModel& m, const data::ScenePair& pair) {
  return run_queries(m, pair.ldr_lr, pair.geometry(), pair.coords);
}

PairPrediction bilinear_baseline(const data::ScenePair& pair) {
  const auto& lr = pair.ldr_lr;
  const auto geo = pair.geometry();
  PairPrediction out;
  for (const auto& q : pair.coords) {
    const auto lp = local_position(q, geo, lr.height(), lr.width());
    const auto s = area_weights(lp.u, lp.v, lr.height(), lr.width());
    for (int c = 0; c < 3; ++c) {
      double v = 0;
      for (int k = 0; k < 4; ++k) {
        v += s.weight[k] * lr.at(s.index[k] / lr.width(), s.index[k] % lr.width(), c);
      }
      out.ldr.push_back(static_cast<float>(v));
    }
  }
  out.hdr = out.ldr;
  return out;
}

double psnr(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ShapeError("psnr: size mismatch");
  double mse = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) mse += (pred[k] - gt[k]) * static_cast<double>(pred[k] - gt[k]);
  mse /= static_cast<double>(pred.size());
  return mse == 0 ? std::numeric_limits<double>::infinity() : 10 * std::log10(1 / mse);
}

double aligned_log_rmse(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ShapeError("aligned_log_rmse: size mismatch");
  std::vector<double> d(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    d[k] = std::log(std::max<double>(pred[k], kLogFloor)) - std::log(std::max<double>(gt[k], kLogFloor));
  }
  const double mu = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double acc = 0;
  for (double x : d) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(d.size()));
}

SrMetrics evaluate(std::span<const data::ScenePair> pairs,
                   const std::function<PairPrediction(const data::ScenePair&)>& predict) {
  if (pairs.empty()) throw DomainError("evaluate: no pairs");
  SrMetrics m;
  for (const auto& p : pairs) {
    const auto pred = predict(p);
    for (float v : pred.ldr) m.finite = m.finite && std::isfinite(v);
    for (float v : pred.hdr) m.finite = m.finite && std::isfinite(v);
    m.psnr += psnr(pred.ldr, p.ldr);
    m.log_rmse += aligned_log_rmse(pred.hdr, p.hdr);
  }
  m.psnr /= static_cast<double>(pairs.size());
  m.log_rmse /= static_cast<double>(pairs.size());
  return m;
}

}  // namespace sritmo
T2L_NN_END
