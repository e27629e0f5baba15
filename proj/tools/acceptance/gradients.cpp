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

// Built with T2L_DOUBLE_PRECISION against t2l_nn64.

#include "gradients.hpp"

#include "support/grad_check.hpp"
#include "t2l/contrastive.hpp"
#include "t2l/datapipe.hpp"
#include "t2l/samplers.hpp"
#include "t2l/sritmo.hpp"
#include "t2l/vq.hpp"

namespace t2l::acceptance {
namespace {

using ad::Tensor;
using testing::check_gradients;
using testing::random_tensor;

static_assert(std::is_same_v<Real, double>);

// Zero biases put ReLU inputs exactly on the kink.
void jitter_biases(ad::ParamStore& ps, Rng& rng) {
  for (auto [name, t] : ps.items()) {
    if (name.ends_with(".bias")) {
      for (auto& v : t.data()) v = uniform(rng, -0.1, 0.1);
    }
  }
}

std::vector<Tensor> with_prefix(const ad::ParamStore& ps, const std::string& prefix) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : ps.items()) {
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

embedding::Vector unit(int d, Rng& rng) {
  embedding::Vector v(static_cast<std::size_t>(d));
  for (auto& x : v) x = static_cast<float>(standard_normal(rng));
  embedding::normalize(v);
  return v;
}

void vq_paths(std::vector<GradientResult>& out, Rng& rng) {
  vq::TokenizerConfig c;
  c.height = 8;
  c.width = 16;
  c.stages = 2;
  c.base_channels = 4;
  c.max_channels = 8;
  c.code_dim = 6;
  c.codebook_size = 16;
  c.circular = true;
  vq::Tokenizer tok(c, 9);
  jitter_biases(tok.params(), rng);
  LdrImage im(8, 16);
  for (auto& v : im.values()) v = static_cast<float>(uniform01(rng));
  const auto img = vq::images_to_tensor(std::vector<LdrImage>{im});
  out.push_back({"vq decoder",
                 check_gradients([&] { return tok.loss(img).total; }, with_prefix(tok.params(), "dec")).rel_error});

  // Encoder and codebook get the straight-through gradient; its oracle is
  // the loss with every stopped quantity frozen at its current value.
  const auto base = tok.loss(img);
  const auto offset = ad::detach(ad::sub(ad::embedding_lookup(tok.codebook(), base.indices), base.z_hat));
  const auto z_frozen = ad::detach(base.z_hat);
  auto surrogate = [&] {
    const auto z = nn::nchw_to_rows(tok.encode_latent(img));
    const auto q = ad::embedding_lookup(tok.codebook(), base.indices);
    const auto rec = tok.decode_latent(nn::rows_to_nchw(ad::add(z, offset), 1, c.token_rows(), c.token_cols()));
    const auto n = static_cast<double>(z.dim(0));
    const auto l_rec = ad::mean(ad::abs(ad::sub(rec, img)));
    const auto l_cb = ad::scale(ad::sum(ad::square(ad::sub(ad::detach(q), z))), 1 / n);
    const auto l_cm = ad::scale(ad::sum(ad::square(ad::sub(z_frozen, q))), 1 / n);
    return ad::add(ad::add(l_rec, l_cb), ad::scale(l_cm, c.beta));
  };
  const auto enc = with_prefix(tok.params(), "enc");
  for (auto t : enc) t.zero_grad();
  tok.loss(img).total.backward();
  std::vector<std::vector<double>> st;
  for (const auto& t : enc) st.push_back(t.grad_or_zeros());
  for (auto t : enc) t.zero_grad();
  surrogate().backward();
  double mismatch = 0, scale = 0;
  for (std::size_t k = 0; k < enc.size(); ++k) {
    const auto g = enc[k].grad_or_zeros();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mismatch = std::max(mismatch, std::abs(g[i] - st[k][i]));
      scale = std::max(scale, std::abs(g[i]));
    }
  }
  const double fd = check_gradients(surrogate, enc).rel_error;
  out.push_back({"vq encoder (straight-through)", std::max(fd, scale > 0 ? mismatch / scale : 0.0)});
}

void sampler_paths(std::vector<GradientResult>& out, Rng& rng) {
  {
    samplers::GlobalConfig c;
    c.transformer = {1, 2, 8, 24};
    c.knn = 2;
    c.tau = 0.5;
    samplers::GlobalSampler s(c, 6, 2, 3, 5, 4);
    jitter_biases(s.params(), rng);
    embedding::EmbeddingStore store(5);
    for (int i = 0; i < 6; ++i) store.add(std::to_string(i), unit(5, rng));
    std::vector<samplers::GlobalExample> batch(3);
    std::vector<embedding::ConditionBundle> conds;
    for (auto& ex : batch) {
      ex.tokens = vq::TokenGrid(2, 3);
      for (auto& v : ex.tokens.indices) v = static_cast<int>(uniform_index(rng, 6));
      ex.image_embedding = unit(5, rng);
      conds.push_back(s.training_condition(ex.image_embedding, store, rng));
    }
    out.push_back({"global NLL + contrastive",
                   check_gradients([&] { return s.loss(batch, conds).total; }, s.params().tensors()).rel_error});
  }
  {
    samplers::LocalConfig c;
    c.transformer = {1, 2, 8, 40};
    c.octaves = 2;
    samplers::LocalSampler s(c, 7, 4, 2, 2, 2, 4, 6);
    jitter_biases(s.params(), rng);
    std::vector<samplers::LocalExample> batch;
    for (int b = 0; b < 2; ++b) {
      samplers::LocalExample ex;
      ex.tokens = vq::TokenGrid(2, 2);
      for (auto& v : ex.tokens.indices) v = static_cast<int>(uniform_index(rng, 7));
      ex.global = vq::TokenGrid(2, 4);
      for (auto& v : ex.global.indices) v = static_cast<int>(uniform_index(rng, 4));
      ex.spe = samplers::window_spe(b, 2 * b, 2, 2, 16, 64, 128, 2);
      batch.push_back(ex);
    }
    out.push_back({"local NLL", check_gradients([&] { return s.loss(batch); }, s.params().tensors()).rel_error});
  }
  {
    auto v = random_tensor({5, 6}, rng);
    auto c = random_tensor({5, 6}, rng);
    out.push_back({"contrastive",
                   check_gradients([&] { return contrastive::contrastive_loss(v, c, 0.3); }, {v, c}).rel_error});
  }
}

void sritmo_paths(std::vector<GradientResult>& out, Rng& rng) {
  {
    auto pred = random_tensor({6, 3}, rng, 0, 1);
    std::vector<Real> gt(18);
    for (auto& g : gt) g = uniform01(rng);
    out.push_back({"L_sr", check_gradients([&] { return sritmo::loss_sr(pred, gt); }, {pred}).rel_error});
    auto log_pred = random_tensor({6, 3}, rng, -2, 2);
    for (auto& g : gt) g = std::exp(uniform(rng, -3, 3));
    out.push_back({"L_itmo",
                   check_gradients([&] { return sritmo::loss_itmo_log(log_pred, gt); }, {log_pred}).rel_error});
  }
  sritmo::SrItmoConfig c;
  c.latent_dim = 4;
  c.encoder_layers = 4;
  c.encoder_width = 4;
  c.sr_hidden = 6;
  c.itmo_hidden = 5;
  sritmo::SrItmoModel m(c, 7);
  jitter_biases(m.params(), rng);
  const auto pano = data::prepare_pano(
      data::synth_pano(data::random_scene(data::SceneClass::kSunDisk, rng), 32, 64), {.base = 4});
  const auto pairs = data::build_pairs(pano, 2, rng, {.base = 4}, "g");
  out.push_back({"L_sr + L_itmo through encoder and MLPs",
                 check_gradients([&] { return sritmo::pair_loss(m, pairs).total; }, m.params().tensors()).rel_error});
}

}  // namespace

std::vector<GradientResult> gradient_integrity() {
  std::vector<GradientResult> out;
  Rng rng(2026);
  vq_paths(out, rng);
  sampler_paths(out, rng);
  sritmo_paths(out, rng);
  return out;
}

ScaleResult itmo_scale_invariance(std::span<const double> kappas, int trials) {
  static_assert(sizeof(Real) == 8, "scale invariance is checked in 64-bit");
  Rng rng(6);
  ScaleResult r{0, INFINITY};
  for (int t = 0; t < trials; ++t) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 40));
    std::vector<Real> p(static_cast<std::size_t>(n) * 3), g(p.size());
    for (auto& x : p) x = std::exp(uniform(rng, -4, 4));
    for (auto& x : g) x = std::exp(uniform(rng, -4, 4));
    const double base = sritmo::loss_itmo(Tensor::from({n, 3}, p), g).item();
    r.min_loss = std::min(r.min_loss, base);
    for (double kappa : kappas) {
      auto q = p;
      for (auto& x : q) x *= kappa;
      r.max_diff = std::max(r.max_diff, std::abs(sritmo::loss_itmo(Tensor::from({n, 3}, q), g).item() - base));
    }
  }
  return r;
}

}  // namespace t2l::acceptance
