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

#include "t2l/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

T2L_NN_BEGIN
namespace vq {

std::vector<int> nearest_entries(std::span<const Real> queries, std::span<const Real> table,
                                 int dim) {
  if (dim <= 0 || queries.size() % dim != 0 || table.size() % dim != 0 || table.empty()) {
    throw ShapeError("nearest_entries: rows of " + std::to_string(dim) + " do not tile " +
                     std::to_string(queries.size()) + " query / " +
                     std::to_string(table.size()) + " table values");
  }
  const std::size_t n = queries.size() / dim, k = table.size() / dim;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* q = queries.data() + i * dim;
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t e = 0; e < k; ++e) {
      const Real* t = table.data() + e * dim;
      double d = 0;
      for (int c = 0; c < dim; ++c) {
        const double diff = static_cast<double>(q[c]) - t[c];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(e);
      }
    }
    out[i] = arg;
  }
  return out;
}

Quantized quantize(const Tensor& z_hat, const Tensor& table) {
  if (z_hat.ndim() != 2 || table.ndim() != 2 || z_hat.dim(1) != table.dim(1)) {
    throw ShapeError("quantize: z_hat " + ad::shape_str(z_hat.shape()) + " vs table " +
                     ad::shape_str(table.shape()));
  }
  Quantized q;
  q.indices = nearest_entries(z_hat.data(), table.data(), table.dim(1));
  q.zq = ad::embedding_lookup(table, q.indices);
  return q;
}

namespace {

// Mean over rows of the squared L2 distance between two [n, d] tensors.
Tensor mean_row_sqdist(const Tensor& a, const Tensor& b) {
  return ad::scale(ad::sum(ad::square(ad::sub(a, b))), Real(1) / static_cast<Real>(a.dim(0)));
}

// Greedy farthest-point selection over encoder outputs, so that distinct
// inputs start on distinct entries; leftover entries get jittered copies.
void farthest_point_init(const Tensor& z, const Tensor& codebook, Rng& rng) {
  const int rows = z.dim(0), dim = z.dim(1), k = codebook.dim(0);
  Real* table = codebook.node()->value.data();
  std::vector<double> mind(static_cast<std::size_t>(rows), std::numeric_limits<double>::infinity());
  auto pick = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rows)));
  for (int e = 0; e < k; ++e) {
    const Real* src = z.data().data() + static_cast<std::size_t>(pick) * dim;
    const bool spare = mind[static_cast<std::size_t>(pick)] == 0;
    for (int c = 0; c < dim; ++c) {
      const double jitter = spare ? 0.01 * standard_normal(rng) : 0.0;
      table[static_cast<std::size_t>(e) * dim + c] = static_cast<Real>(src[c] + jitter);
    }
    double best = -1;
    for (int r = 0; r < rows; ++r) {
      double d = 0;
      const Real* q = z.data().data() + static_cast<std::size_t>(r) * dim;
      for (int c = 0; c < dim; ++c) {
        const double diff = static_cast<double>(q[c]) - src[c];
        d += diff * diff;
      }
      auto& m = mind[static_cast<std::size_t>(r)];
      m = std::min(m, d);
      if (m > best) {
        best = m;
        pick = r;
      }
    }
    if (best <= 0) pick = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rows)));
  }
}

}  // namespace

LossParts vq_loss(const Tensor& images, const Tensor& z_hat_rows, const Tensor& table,
                  Real beta, const std::function<Tensor(const Tensor&)>& decode_rows) {
  LossParts parts;
  auto q = quantize(z_hat_rows, table);
  const auto dec_in = ad::straight_through(q.zq, z_hat_rows);
  parts.recon = decode_rows(dec_in);
  if (parts.recon.shape() != images.shape()) {
    throw ShapeError("vq_loss: reconstruction " + ad::shape_str(parts.recon.shape()) +
                     " vs images " + ad::shape_str(images.shape()));
  }
  const auto rec = ad::mean(ad::abs(ad::sub(parts.recon, images)));
  const auto cb = mean_row_sqdist(ad::detach(q.zq), z_hat_rows);
  const auto commit = mean_row_sqdist(ad::detach(z_hat_rows), q.zq);
  parts.total = ad::add(ad::add(rec, cb), ad::scale(commit, beta));
  parts.rec = rec.item();
  parts.codebook = cb.item();
  parts.commit = commit.item();
  parts.indices = std::move(q.indices);
  parts.z_hat = z_hat_rows;
  return parts;
}

Tokenizer::Tokenizer(const TokenizerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.stages < 1 || cfg.height % cfg.factor() != 0 || cfg.width % cfg.factor() != 0) {
    throw DomainError("tokenizer: " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width) + " is not divisible by factor " +
                      std::to_string(cfg.factor()));
  }
  if (cfg.codebook_size < 1 || cfg.code_dim < 1) throw DomainError("tokenizer: empty codebook");
  Rng rng(seed);
  const ad::Conv2dOptions same{1, 1, cfg.circular};
  const ad::Conv2dOptions down{2, 1, cfg.circular};
  const ad::Conv2dOptions point{1, 0, false};
  auto width_at = [&](int s) { return std::min(cfg.base_channels << s, cfg.max_channels); };

  enc_.emplace_back(params_, "enc.0", 3, width_at(0), 3, same, rng);
  for (int s = 0; s < cfg.stages; ++s) {
    enc_.emplace_back(params_, "enc." + std::to_string(s + 1), width_at(s), width_at(s + 1), 3,
                      down, rng);
  }
  enc_out_ = nn::Conv2d(params_, "enc.out", width_at(cfg.stages), cfg.code_dim, 1, point, rng);
  // Small initial codes keep the squared-distance terms from swamping the
  // reconstruction term early on, which otherwise collapses inputs onto one entry.
  for (auto& v : enc_out_.weight.data()) v *= Real(0.1);
  dec_in_ = nn::Conv2d(params_, "dec.in", cfg.code_dim, width_at(cfg.stages), 1, point, rng);
  for (int s = cfg.stages; s > 0; --s) {
    dec_.emplace_back(params_, "dec." + std::to_string(s), width_at(s), width_at(s - 1), 3, same,
                      rng);
  }
  dec_out_ = nn::Conv2d(params_, "dec.out", width_at(0), 3, 3, same, rng);
  const double bound = 1.0 / cfg.codebook_size;
  std::vector<Real> table(static_cast<std::size_t>(cfg.codebook_size) * cfg.code_dim);
  for (auto& v : table) v = static_cast<Real>(uniform(rng, -bound, bound));
  codebook_ = params_.add("codebook", {cfg.codebook_size, cfg.code_dim}, std::move(table));
}

Tensor Tokenizer::encode_latent(const Tensor& x) const {
  Tensor h = x;
  for (const auto& conv : enc_) h = ad::relu(conv(h));
  return enc_out_(h);
}

Tensor Tokenizer::decode_latent(const Tensor& z) const {
  Tensor h = ad::relu(dec_in_(z));
  for (const auto& conv : dec_) h = ad::relu(conv(ad::upsample_nearest2x(h)));
  return dec_out_(h);
}

LossParts Tokenizer::loss(const Tensor& images) const {
  if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.height ||
      images.dim(3) != cfg_.width) {
    throw DomainError("tokenizer expects [N,3," + std::to_string(cfg_.height) + "," +
                      std::to_string(cfg_.width) + "], got " + ad::shape_str(images.shape()));
  }
  const int n = images.dim(0);
  const auto z = nn::nchw_to_rows(encode_latent(images));
  return vq_loss(images, z, codebook_, cfg_.beta, [&](const Tensor& rows) {
    return decode_latent(nn::rows_to_nchw(rows, n, cfg_.token_rows(), cfg_.token_cols()));
  });
}

Tensor image_to_tensor(const LdrImage& img) { return images_to_tensor({&img, 1}); }

Tensor images_to_tensor(std::span<const LdrImage> imgs) {
  if (imgs.empty()) throw DomainError("images_to_tensor: no images");
  const int h = imgs[0].height(), w = imgs[0].width();
  std::vector<Real> v(imgs.size() * 3 * h * w);
  std::size_t o = 0;
  for (const auto& img : imgs) {
    if (img.height() != h || img.width() != w) throw ShapeError("images_to_tensor: mixed sizes");
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < h; ++r) {
        for (int col = 0; col < w; ++col) v[o++] = img.at(r, col, c);
      }
    }
  }
  return Tensor::from({static_cast<int>(imgs.size()), 3, h, w}, std::move(v));
}

LdrImage tensor_to_image(const Tensor& t, int index) {
  const int h = t.dim(2), w = t.dim(3);
  LdrImage img(h, w);
  const std::size_t base = static_cast<std::size_t>(index) * 3 * h * w;
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const Real v = t.at(base + (static_cast<std::size_t>(c) * h + r) * w + col);
        img.at(r, col, c) = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

std::vector<TokenGrid> Tokenizer::encode_batch(std::span<const LdrImage> imgs) const {
  for (const auto& img : imgs) {
    if (img.height() != cfg_.height || img.width() != cfg_.width) {
      throw DomainError("tokenizer expects " + std::to_string(cfg_.height) + "x" +
                        std::to_string(cfg_.width) + " input, got " +
                        std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
  }
  if (imgs.empty()) return {};
  ad::NoGradGuard guard;
  const auto rows = nn::nchw_to_rows(encode_latent(images_to_tensor(imgs)));
  const auto idx = nearest_entries(rows.data(), codebook_.data(), cfg_.code_dim);
  const int per = cfg_.token_rows() * cfg_.token_cols();
  std::vector<TokenGrid> out;
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    TokenGrid g(cfg_.token_rows(), cfg_.token_cols());
    std::copy_n(idx.begin() + static_cast<std::ptrdiff_t>(k * per), per, g.indices.begin());
    out.push_back(std::move(g));
  }
  return out;
}

TokenGrid Tokenizer::encode(const LdrImage& img) const {
  return encode_batch({&img, 1}).front();
}

LdrImage Tokenizer::decode(const TokenGrid& tokens) const {
  if (tokens.rows != cfg_.token_rows() || tokens.cols != cfg_.token_cols()) {
    throw DomainError("tokenizer decodes " + std::to_string(cfg_.token_rows()) + "x" +
                      std::to_string(cfg_.token_cols()) + " grids, got " +
                      std::to_string(tokens.rows) + "x" + std::to_string(tokens.cols));
  }
  return decode_grid(tokens);
}

LdrImage Tokenizer::decode_grid(const TokenGrid& tokens) const {
  if (tokens.rows < 1 || tokens.cols < 1 ||
      tokens.indices.size() != static_cast<std::size_t>(tokens.rows) * tokens.cols) {
    throw DomainError("decode_grid: malformed token grid");
  }
  for (int v : tokens.indices) {
    if (v < 0 || v >= cfg_.codebook_size) throw DomainError("token index out of range");
  }
  ad::NoGradGuard guard;
  const auto rows = ad::embedding_lookup(codebook_, tokens.indices);
  return tensor_to_image(decode_latent(nn::rows_to_nchw(rows, 1, tokens.rows, tokens.cols)));
}

TrainLog train_tokenizer(Tokenizer& tok, std::span<const LdrImage> data, const TrainConfig& cfg) {
  if (data.empty()) throw DomainError("train_tokenizer: empty dataset");
  Rng rng(cfg.seed);
  ad::Adam opt(tok.params().tensors(), {cfg.lr});
  const auto& tc = tok.config();
  std::vector<long> last_used(static_cast<std::size_t>(tc.codebook_size), 0);
  const int batch = std::clamp(cfg.batch, 1, static_cast<int>(data.size()));
  std::vector<std::size_t> order(data.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::size_t cursor = order.size();
  TrainLog log;
  std::vector<LdrImage> mb;
  for (int step = 1; step <= cfg.steps; ++step) {
    mb.clear();
    while (static_cast<int>(mb.size()) < batch) {
      if (cursor == order.size()) {
        for (std::size_t k = order.size(); k > 1; --k) {
          std::swap(order[k - 1], order[uniform_index(rng, k)]);
        }
        cursor = 0;
      }
      mb.push_back(data[order[cursor++]]);
    }
    if (step == 1 && cfg.data_init) {
      ad::NoGradGuard guard;
      const auto z = nn::nchw_to_rows(tok.encode_latent(images_to_tensor(mb)));
      farthest_point_init(z, tok.codebook(), rng);
    }
    if (cfg.cosine) {
      const double t = static_cast<double>(step - 1) / std::max(1, cfg.steps - 1);
      opt.set_lr(cfg.lr * (0.55 + 0.45 * std::cos(t * 3.14159265358979323846)));
    }
    opt.zero_grad();
    auto parts = tok.loss(images_to_tensor(mb));
    parts.total.backward();
    opt.step();
    log.loss.push_back(parts.total.item());
    log.rec.push_back(parts.rec);

    for (int i : parts.indices) last_used[static_cast<std::size_t>(i)] = step;
    auto table = tok.codebook().node()->value.data();
    const int rows = parts.z_hat.dim(0);
    for (int e = 0; e < tc.codebook_size; ++e) {
      if (step - last_used[static_cast<std::size_t>(e)] < tc.dead_after) continue;
      const auto src = uniform_index(rng, static_cast<std::uint64_t>(rows));
      std::copy_n(parts.z_hat.data().begin() + static_cast<std::ptrdiff_t>(src * tc.code_dim),
                  tc.code_dim, table + static_cast<std::ptrdiff_t>(e) * tc.code_dim);
      last_used[static_cast<std::size_t>(e)] = step;
      ++log.reseeded;
    }
  }
  return log;
}

double reconstruction_mse(const Tokenizer& tok, std::span<const LdrImage> data) {
  if (data.empty()) throw DomainError("reconstruction_mse: empty dataset");
  double sum = 0;
  std::size_t count = 0;
  const auto grids = tok.encode_batch(data);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto rec = tok.decode(grids[k]);
    const auto a = data[k].values();
    const auto b = rec.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      sum += d * d;
    }
    count += a.size();
  }
  return sum / static_cast<double>(count);
}

}  // namespace vq
T2L_NN_END
