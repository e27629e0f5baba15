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

#include "t2l/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

T2L_NN_BEGIN
namespace samplers {

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[uniform_index(rng, k)]);
  return order;
}

// Cycles through shuffled epochs and hands out minibatches of indices.
class Batcher {
 public:
  Batcher(std::size_t n, int batch, Rng& rng)
      : n_(n), batch_(static_cast<std::size_t>(std::clamp<long>(batch, 1, static_cast<long>(n)))),
        rng_(rng) {}
  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        order_ = shuffled(n_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::size_t argmax(std::span<const Real> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

double log_softmax_at(std::span<const Real> logits, std::size_t k) {
  const double mx = logits[argmax(logits)];
  double z = 0;
  for (Real x : logits) z += std::exp(x - mx);
  return logits[k] - mx - std::log(z);
}

}  // namespace

// --- transformer -----------------------------------------------------------------

CausalTransformer::CausalTransformer(ad::ParamStore& ps, const std::string& prefix,
                                     const TransformerConfig& cfg, int vocab, Rng& rng)
    : cfg_(cfg), vocab_(vocab) {
  if (cfg.layers < 1 || cfg.heads < 1 || cfg.width % cfg.heads != 0 || cfg.context < 2 ||
      vocab < 1) {
    throw DomainError("transformer: invalid configuration");
  }
  const int w = cfg.width;
  tok_emb_ = ps.add(prefix + ".tok_emb", {vocab, w},
                    nn::normal_values(static_cast<std::size_t>(vocab) * w, 0.1, rng));
  pos_emb_ = ps.add(prefix + ".pos_emb", {cfg.context, w},
                    nn::normal_values(static_cast<std::size_t>(cfg.context) * w, 0.1, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    Block b;
    b.ln1 = nn::LayerNorm(ps, p + ".ln1", w);
    b.qkv = nn::Linear(ps, p + ".qkv", w, 3 * w, rng);
    b.proj = nn::Linear(ps, p + ".proj", w, w, rng);
    b.ln2 = nn::LayerNorm(ps, p + ".ln2", w);
    b.fc1 = nn::Linear(ps, p + ".fc1", w, 4 * w, rng);
    b.fc2 = nn::Linear(ps, p + ".fc2", 4 * w, w, rng);
    // Residual branches start small so the stack begins near the identity.
    for (auto* t : {&b.proj.weight, &b.fc2.weight}) {
      for (auto& x : t->data()) x *= Real(0.2);
    }
    blocks_.push_back(std::move(b));
  }
  ln_f_ = nn::LayerNorm(ps, prefix + ".ln_f", w);
  head_ = nn::Linear(ps, prefix + ".head", w, vocab, rng);
}

Tensor CausalTransformer::logits(const Tensor& cond, std::span<const int> tokens, int n) const {
  if (cond.ndim() != 3 || cond.dim(2) != cfg_.width) {
    throw ShapeError("transformer: condition must be [B, C, " + std::to_string(cfg_.width) +
                     "], got " + ad::shape_str(cond.shape()));
  }
  const int b = cond.dim(0), c = cond.dim(1), w = cfg_.width;
  if (c < 1) throw DomainError("transformer: zero-length condition");
  if (n < 1 || tokens.size() != static_cast<std::size_t>(b) * n) {
    throw ShapeError("transformer: expected " + std::to_string(b) + "x" + std::to_string(n) +
                     " tokens, got " + std::to_string(tokens.size()));
  }
  const int t = c + n - 1;
  if (t > cfg_.context) {
    throw DomainError("transformer: sequence of " + std::to_string(t) +
                      " exceeds the context of " + std::to_string(cfg_.context));
  }
  for (int v : tokens) {
    if (v < 0 || v >= vocab_) throw DomainError("transformer: token index out of range");
  }
  Tensor x = cond;
  if (n > 1) {
    std::vector<int> inputs;
    inputs.reserve(static_cast<std::size_t>(b) * (n - 1));
    for (int i = 0; i < b; ++i) {
      inputs.insert(inputs.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i) * n,
                    tokens.begin() + static_cast<std::ptrdiff_t>(i) * n + n - 1);
    }
    const auto emb = ad::reshape(ad::embedding_lookup(tok_emb_, inputs), {b, n - 1, w});
    x = ad::concat({cond, emb}, 1);
  }
  x = ad::add(x, ad::slice(pos_emb_, 0, 0, t));
  Tensor h = ad::reshape(x, {b * t, w});
  for (const auto& blk : blocks_) {
    const auto a = blk.qkv(blk.ln1(h));
    auto part = [&](int k) { return ad::reshape(ad::slice(a, 1, k * w, (k + 1) * w), {b, t, w}); };
    const auto att = ad::causal_attention(part(0), part(1), part(2), cfg_.heads);
    h = ad::add(h, blk.proj(ad::reshape(att, {b * t, w})));
    h = ad::add(h, blk.fc2(ad::relu(blk.fc1(blk.ln2(h)))));
  }
  h = ad::reshape(ln_f_(h), {b, t, w});
  return head_(ad::reshape(ad::slice(h, 1, c - 1, c - 1 + n), {b * n, w}));
}

int sample_index(std::span<const Real> logits, const SampleConfig& cfg, Rng& rng) {
  if (logits.empty()) throw DomainError("sample_index: empty logits");
  if (cfg.temperature <= 0) return static_cast<int>(argmax(logits));
  const std::size_t v = logits.size();
  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  const std::size_t k = cfg.top_k <= 0 ? v : std::min<std::size_t>(v, static_cast<std::size_t>(cfg.top_k));
  std::vector<double> p(k);
  const double mx = logits[order[0]];
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) z += (p[i] = std::exp((logits[order[i]] - mx) / cfg.temperature));
  double u = uniform01(rng) * z;
  for (std::size_t i = 0; i < k; ++i) {
    if ((u -= p[i]) < 0) return static_cast<int>(order[i]);
  }
  return static_cast<int>(order[k - 1]);
}

// --- global sampler ------------------------------------------------------------------

GlobalSampler::GlobalSampler(const GlobalConfig& cfg, int vocab, int rows, int cols, int cond_dim,
                             std::uint64_t seed)
    : cfg_(cfg), rows_(rows), cols_(cols), cond_dim_(cond_dim) {
  if (rows < 1 || cols < 1 || cond_dim < 1) throw DomainError("global sampler: empty shape");
  if (!cfg.no_knn && cfg.knn < 0) throw DomainError("global sampler: negative K");
  if (condition_length() + rows * cols - 1 > cfg.transformer.context) {
    throw DomainError("global sampler: context " + std::to_string(cfg.transformer.context) +
                      " shorter than condition plus grid");
  }
  Rng rng(seed);
  cond_head_ = nn::Linear(params_, "global.cond_head", cond_dim, cfg.transformer.width, rng);
  tf_ = CausalTransformer(params_, "global.tf", cfg.transformer, vocab, rng);
}

embedding::ConditionBundle GlobalSampler::training_condition(std::span<const float> image_embedding,
                                                             const embedding::EmbeddingStore& store,
                                                             Rng& rng) const {
  const auto pseudo = embedding::pseudo_text_feature(image_embedding, cfg_.alpha, rng);
  return condition(pseudo, store);
}

embedding::ConditionBundle GlobalSampler::condition(std::span<const float> text,
                                                    const embedding::EmbeddingStore& store) const {
  if (cfg_.no_knn) {
    embedding::ConditionBundle b;
    b.vectors.emplace_back(text.begin(), text.end());
    return b;
  }
  if (store.size() < static_cast<std::size_t>(cfg_.knn)) {
    throw DomainError("global sampler: embedding store holds " + std::to_string(store.size()) +
                      " entries, K=" + std::to_string(cfg_.knn) + " needed");
  }
  return embedding::knn_condition(text, store, cfg_.knn, text);
}

void GlobalSampler::check_bundle(const embedding::ConditionBundle& b) const {
  if (static_cast<int>(b.size()) != condition_length()) {
    throw ShapeError("global sampler: condition of length " + std::to_string(b.size()) +
                     ", expected " + std::to_string(condition_length()));
  }
  for (const auto& v : b.vectors) {
    if (static_cast<int>(v.size()) != cond_dim_) throw ShapeError("global sampler: condition dim mismatch");
  }
}

Tensor GlobalSampler::project(std::span<const embedding::ConditionBundle> conds) const {
  std::vector<Real> flat;
  for (const auto& b : conds) {
    check_bundle(b);
    for (const auto& v : b.vectors) flat.insert(flat.end(), v.begin(), v.end());
  }
  const int n = static_cast<int>(conds.size()), c = condition_length();
  const auto rows = cond_head_(Tensor::from({n * c, cond_dim_}, std::move(flat)));
  return ad::reshape(rows, {n, c, cfg_.transformer.width});
}

GlobalLoss GlobalSampler::loss(std::span<const GlobalExample> batch,
                               std::span<const embedding::ConditionBundle> conds) const {
  if (batch.empty() || batch.size() != conds.size()) {
    throw ShapeError("global sampler: batch and condition counts differ");
  }
  const int n = rows_ * cols_;
  std::vector<int> tokens;
  for (const auto& ex : batch) {
    if (ex.tokens.rows != rows_ || ex.tokens.cols != cols_) {
      throw ShapeError("global sampler: grid " + std::to_string(ex.tokens.rows) + "x" +
                       std::to_string(ex.tokens.cols) + " does not match the sampler");
    }
    tokens.insert(tokens.end(), ex.tokens.indices.begin(), ex.tokens.indices.end());
  }
  const auto logits = tf_.logits(project(conds), tokens, n);
  GlobalLoss out;
  Tensor nll = ad::cross_entropy_with_logits(logits, tokens);
  out.nll = nll.item();
  out.total = nll;
  if (batch.size() >= 2 && cfg_.con_weight > 0) {
    const int b = static_cast<int>(batch.size());
    std::vector<Real> v, c;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (static_cast<int>(batch[i].image_embedding.size()) != cond_dim_) {
        throw ShapeError("global sampler: image embedding dim mismatch");
      }
      v.insert(v.end(), batch[i].image_embedding.begin(), batch[i].image_embedding.end());
      const auto& text = conds[i].vectors.back();
      c.insert(c.end(), text.begin(), text.end());
    }
    const auto pv = ad::l2_normalize_rows(cond_head_(Tensor::from({b, cond_dim_}, std::move(v))));
    const auto pc = ad::l2_normalize_rows(cond_head_(Tensor::from({b, cond_dim_}, std::move(c))));
    const auto con = contrastive::contrastive_loss(pv, pc, static_cast<Real>(cfg_.tau));
    out.con = con.item();
    out.total = ad::add(out.total, ad::scale(con, static_cast<Real>(cfg_.con_weight)));
  }
  return out;
}

SamplerOutput GlobalSampler::sample(const embedding::ConditionBundle& cond,
                                    const SampleConfig& cfg, std::span<const int> frozen) const {
  check_bundle(cond);
  if (!frozen.empty() && frozen.size() != static_cast<std::size_t>(rows_) * cols_) {
    throw ShapeError("global sampler: frozen mask does not match the grid");
  }
  ad::NoGradGuard guard;
  const auto c = project({&cond, 1});
  Rng rng(cfg.seed);
  SamplerOutput out;
  out.grid = TokenGrid(rows_, cols_);
  const int n = rows_ * cols_;
  std::vector<int> prefix;
  for (int i = 0; i < n; ++i) {
    prefix.push_back(0);  // placeholder for the position being predicted
    const auto logits = tf_.logits(c, prefix, i + 1);
    const std::span<const Real> row = logits.data().subspan(static_cast<std::size_t>(i) * vocab(), vocab());
    const int tok = !frozen.empty() && frozen[i] >= 0 ? frozen[i] : sample_index(row, cfg, rng);
    prefix.back() = tok;
    out.grid.indices[i] = tok;
    out.logprobs.push_back(log_softmax_at(row, static_cast<std::size_t>(tok)));
  }
  return out;
}

double GlobalSampler::teacher_forced_accuracy(std::span<const GlobalExample> data,
                                              std::span<const embedding::ConditionBundle> conds) const {
  if (data.size() != conds.size() || data.empty()) throw ShapeError("accuracy: count mismatch");
  ad::NoGradGuard guard;
  const int n = rows_ * cols_;
  std::size_t hits = 0, total = 0;
  for (std::size_t e = 0; e < data.size(); ++e) {
    const auto logits = tf_.logits(project(conds.subspan(e, 1)), data[e].tokens.indices, n);
    for (int i = 0; i < n; ++i) {
      const auto row = logits.data().subspan(static_cast<std::size_t>(i) * vocab(), vocab());
      hits += static_cast<int>(argmax(row)) == data[e].tokens.indices[i];
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

GlobalStep global_train_step(GlobalSampler& s, ad::Adam& opt, std::span<const GlobalExample> batch,
                             const embedding::EmbeddingStore& store, Rng& rng) {
  std::vector<embedding::ConditionBundle> conds;
  for (const auto& ex : batch) conds.push_back(s.training_condition(ex.image_embedding, store, rng));
  opt.zero_grad();
  const auto l = s.loss(batch, conds);
  l.total.backward();
  opt.step();
  return {l.total.item(), l.nll, l.con};
}

std::vector<GlobalStep> train_global(GlobalSampler& s, std::span<const GlobalExample> data,
                                     const embedding::EmbeddingStore& store,
                                     const TrainSchedule& sched) {
  if (data.empty()) throw DomainError("train_global: empty dataset");
  Rng rng(sched.seed);
  ad::Adam opt(s.params().tensors(), {sched.lr});
  Batcher batches(data.size(), sched.batch, rng);
  std::vector<GlobalStep> log;
  for (int step = 0; step < sched.steps; ++step) {
    std::vector<GlobalExample> batch;
    for (auto i : batches.next()) batch.push_back(data[i]);
    log.push_back(global_train_step(s, opt, batch, store, rng));
  }
  return log;
}

// --- local sampler -------------------------------------------------------------------

LocalSampler::LocalSampler(const LocalConfig& cfg, int vocab, int global_vocab, int window_rows,
                           int window_cols, int global_rows, int global_cols, std::uint64_t seed)
    : cfg_(cfg), wr_(window_rows), wc_(window_cols), gr_(global_rows), gc_(global_cols) {
  if (wr_ < 1 || wc_ < 1 || gr_ < 0 || gc_ < 0 || global_vocab < 1) {
    throw DomainError("local sampler: invalid shape");
  }
  if (condition_length() < 1) throw DomainError("local sampler: zero-length condition");
  if (condition_length() + wr_ * wc_ - 1 > cfg.transformer.context) {
    throw DomainError("local sampler: context " + std::to_string(cfg.transformer.context) +
                      " shorter than condition plus window");
  }
  Rng rng(seed);
  const int w = cfg.transformer.width;
  global_emb_ = params_.add("local.global_emb", {global_vocab, w},
                            nn::normal_values(static_cast<std::size_t>(global_vocab) * w, 0.1, rng));
  spe_head_ = nn::Linear(params_, "local.spe_head", sphere::spe_channels(cfg.octaves), w, rng);
  tf_ = CausalTransformer(params_, "local.tf", cfg.transformer, vocab, rng);
}

int LocalSampler::condition_length() const { return gr_ * gc_ + (cfg_.no_sp ? 0 : wr_ * wc_); }

void LocalSampler::check_example(const TokenGrid& global, const sphere::SpeGrid& spe) const {
  if (global.rows != gr_ || global.cols != gc_) {
    throw ShapeError("local sampler: holistic grid " + std::to_string(global.rows) + "x" +
                     std::to_string(global.cols) + ", expected " + std::to_string(gr_) + "x" +
                     std::to_string(gc_));
  }
  if (spe.rows != wr_ || spe.cols != wc_ || spe.octaves != cfg_.octaves ||
      spe.data.size() != static_cast<std::size_t>(wr_) * wc_ * spe.channels()) {
    throw ShapeError("local sampler: SPE grid " + std::to_string(spe.rows) + "x" +
                     std::to_string(spe.cols) + " does not match the " + std::to_string(wr_) + "x" +
                     std::to_string(wc_) + " token window");
  }
}

Tensor LocalSampler::condition(std::span<const TokenGrid> globals,
                               std::span<const sphere::SpeGrid> spes) const {
  if (globals.size() != spes.size() || globals.empty()) throw ShapeError("local sampler: batch mismatch");
  const int b = static_cast<int>(globals.size()), w = cfg_.transformer.width;
  std::vector<int> gidx;
  std::vector<Real> spe;
  for (std::size_t i = 0; i < globals.size(); ++i) {
    check_example(globals[i], spes[i]);
    gidx.insert(gidx.end(), globals[i].indices.begin(), globals[i].indices.end());
    spe.insert(spe.end(), spes[i].data.begin(), spes[i].data.end());
  }
  std::vector<Tensor> parts;
  if (gr_ * gc_ > 0) {
    for (int v : gidx) {
      if (v < 0 || v >= global_emb_.dim(0)) throw DomainError("local sampler: holistic token out of range");
    }
    parts.push_back(ad::reshape(ad::embedding_lookup(global_emb_, gidx), {b, gr_ * gc_, w}));
  }
  if (!cfg_.no_sp) {
    const int np = wr_ * wc_;
    if (cfg_.no_spe) {
      const auto ch = static_cast<std::size_t>(sphere::spe_channels(cfg_.octaves));
      for (std::size_t k = 0; k < spe.size(); ++k) {
        if (k % ch >= 2) spe[k] = 0;
      }
    }
    const auto rows = spe_head_(Tensor::from({b * np, sphere::spe_channels(cfg_.octaves)}, std::move(spe)));
    parts.push_back(ad::reshape(rows, {b, np, w}));
  }
  return parts.size() == 1 ? parts[0] : ad::concat(parts, 1);
}

Tensor LocalSampler::loss(std::span<const LocalExample> batch) const {
  if (batch.empty()) throw DomainError("local sampler: empty batch");
  std::vector<TokenGrid> globals;
  std::vector<sphere::SpeGrid> spes;
  std::vector<int> tokens;
  for (const auto& ex : batch) {
    if (ex.tokens.rows != wr_ || ex.tokens.cols != wc_) throw ShapeError("local sampler: window shape mismatch");
    globals.push_back(ex.global);
    spes.push_back(ex.spe);
    tokens.insert(tokens.end(), ex.tokens.indices.begin(), ex.tokens.indices.end());
  }
  const auto logits = tf_.logits(condition(globals, spes), tokens, wr_ * wc_);
  return ad::cross_entropy_with_logits(logits, tokens);
}

SamplerOutput LocalSampler::sample_window(const TokenGrid& global, const sphere::SpeGrid& spe,
                                          std::span<const int> frozen, const SampleConfig& cfg,
                                          Rng& rng) const {
  const int n = wr_ * wc_;
  if (!frozen.empty() && frozen.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("local sampler: frozen mask does not match the window");
  }
  ad::NoGradGuard guard;
  const auto c = condition({&global, 1}, {&spe, 1});
  SamplerOutput out;
  out.grid = TokenGrid(wr_, wc_);
  std::vector<int> prefix;
  for (int i = 0; i < n; ++i) {
    prefix.push_back(0);
    const auto logits = tf_.logits(c, prefix, i + 1);
    const auto row = logits.data().subspan(static_cast<std::size_t>(i) * vocab(), vocab());
    const int tok = !frozen.empty() && frozen[i] >= 0 ? frozen[i] : sample_index(row, cfg, rng);
    prefix.back() = tok;
    out.grid.indices[i] = tok;
    out.logprobs.push_back(log_softmax_at(row, static_cast<std::size_t>(tok)));
  }
  return out;
}

SamplerOutput LocalSampler::sample(const TokenGrid& global, const sphere::SpeGrid& spe,
                                   const SampleConfig& cfg) const {
  Rng rng(cfg.seed);
  return sample_window(global, spe, {}, cfg, rng);
}

std::vector<double> train_local(LocalSampler& s, std::span<const LocalExample> data,
                                const TrainSchedule& sched) {
  if (data.empty()) throw DomainError("train_local: empty dataset");
  Rng rng(sched.seed);
  ad::Adam opt(s.params().tensors(), {sched.lr});
  Batcher batches(data.size(), sched.batch, rng);
  std::vector<double> log;
  for (int step = 0; step < sched.steps; ++step) {
    std::vector<LocalExample> batch;
    for (auto i : batches.next()) batch.push_back(data[i]);
    opt.zero_grad();
    const auto l = s.loss(batch);
    l.backward();
    opt.step();
    log.push_back(l.item());
  }
  return log;
}

// --- sliding windows -----------------------------------------------------------------

sphere::SpeGrid window_spe(int row, int col, int window_rows, int window_cols, int factor,
                           int pano_h, int pano_w, int octaves) {
  const sphere::PatchGeometry g{static_cast<long>(row) * factor, static_cast<long>(col) * factor,
                                static_cast<long>(window_rows) * factor,
                                static_cast<long>(window_cols) * factor, pano_h, pano_w};
  return sphere::patch_spe(g, window_rows, window_cols, octaves);
}

std::vector<int> window_origins(int extent, int window, int stride, bool wrap) {
  if (window > extent) {
    throw DomainError("window of " + std::to_string(window) + " tokens exceeds the lattice extent " +
                      std::to_string(extent));
  }
  if (stride < 1 || stride > window) throw DomainError("stride must lie in [1, window]");
  std::vector<int> out;
  if (wrap) {
    for (int o = 0; o < extent; o += stride) out.push_back(o);
    return out;
  }
  for (int o = 0; o + window <= extent; o += stride) out.push_back(o);
  if (out.back() + window < extent) out.push_back(extent - window);
  return out;
}

std::vector<LocalExample> local_examples(const LdrImage& pano, const TokenGrid& global,
                                         const vq::Tokenizer& local, int stride, int octaves) {
  const auto& lc = local.config();
  const int f = lc.factor();
  if (pano.height() % f != 0 || pano.width() % f != 0) {
    throw DomainError("local_examples: panorama not divisible by the token factor");
  }
  const int wr = lc.token_rows(), wc = lc.token_cols();
  const int rows = pano.height() / f, cols = pano.width() / f;
  std::vector<LdrImage> crops;
  std::vector<std::pair<int, int>> where;
  for (int r : window_origins(rows, wr, stride, false)) {
    for (int c : window_origins(cols, wc, stride, true)) {
      crops.push_back(crop_wrap(pano, r * f, c * f, lc.height, lc.width));
      where.emplace_back(r, c);
    }
  }
  const auto grids = local.encode_batch(crops);
  std::vector<LocalExample> out;
  for (std::size_t k = 0; k < grids.size(); ++k) {
    out.push_back({grids[k], global,
                   window_spe(where[k].first, where[k].second, wr, wc, f, pano.height(), pano.width(),
                              octaves)});
  }
  return out;
}

PanoramaOutput generate_panorama(const TokenGrid& global, const LocalSampler& sampler,
                                 const vq::Tokenizer& local, int pano_h, int pano_w, int stride,
                                 const SampleConfig& cfg) {
  const int f = local.config().factor();
  if (pano_h % f != 0 || pano_w % f != 0) {
    throw DomainError("generate_panorama: size not divisible by the token factor");
  }
  const int rows = pano_h / f, cols = pano_w / f;
  const int wr = sampler.window_rows(), wc = sampler.window_cols();
  const auto row_origins = window_origins(rows, wr, stride, false);
  const auto col_origins = window_origins(cols, wc, stride, true);
  TokenGrid grid(rows, cols);
  std::fill(grid.indices.begin(), grid.indices.end(), -1);
  Rng rng(cfg.seed);
  for (int r0 : row_origins) {
    for (int c0 : col_origins) {
      std::vector<int> frozen(static_cast<std::size_t>(wr) * wc);
      bool any_free = false;
      for (int i = 0; i < wr; ++i) {
        for (int j = 0; j < wc; ++j) {
          const int v = grid.at(r0 + i, (c0 + j) % cols);
          frozen[static_cast<std::size_t>(i) * wc + j] = v;
          any_free = any_free || v < 0;
        }
      }
      if (!any_free) continue;
      const auto spe = window_spe(r0, c0, wr, wc, f, pano_h, pano_w, sampler.config().octaves);
      const auto win = sampler.sample_window(global, spe, frozen, cfg, rng);
      for (int i = 0; i < wr; ++i) {
        for (int j = 0; j < wc; ++j) grid.at(r0 + i, (c0 + j) % cols) = win.grid.at(i, j);
      }
    }
  }
  PanoramaOutput out{grid, local.decode_grid(grid)};
  return out;
}

}  // namespace samplers
T2L_NN_END
