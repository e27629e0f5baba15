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

// Gradient and causality checks for the samplers at 64-bit.

#include <cmath>

#include "doctest.h"
#include "support/grad_check.hpp"
#include "t2l/samplers.hpp"

using namespace t2l;
using namespace t2l::samplers;
using t2l::testing::check_gradients;

static_assert(std::is_same_v<Real, double>);

namespace {

TransformerConfig tiny() { return {1, 2, 8, 24}; }

embedding::Vector unit(int d, Rng& rng) {
  embedding::Vector v(static_cast<std::size_t>(d));
  for (auto& x : v) x = static_cast<float>(standard_normal(rng));
  embedding::normalize(v);
  return v;
}

// Random biases move ReLU inputs off the kink so central differences apply.
void jitter_biases(ad::ParamStore& ps, Rng& rng) {
  for (auto [name, t] : ps.items()) {
    if (name.ends_with(".bias")) {
      for (auto& x : t.data()) x = uniform(rng, -0.1, 0.1);
    }
  }
}

}  // namespace

TEST_CASE("transformer logits are causal") {
  Rng rng(1);
  ad::ParamStore ps;
  CausalTransformer tf(ps, "tf", {2, 2, 8, 32}, 11, rng);
  const auto cond = testing::random_tensor({1, 3, 8}, rng, -1, 1, false);
  std::vector<int> tokens{1, 4, 7, 2, 9, 0, 5};
  const auto base = tf.logits(cond, tokens, 7);
  for (int pos = 0; pos < 7; ++pos) {
    auto changed = tokens;
    changed[pos] = (changed[pos] + 3) % 11;
    const auto out = tf.logits(cond, changed, 7);
    // Row i sees tokens [0, i); changing token pos affects rows > pos only.
    for (int i = 0; i <= pos; ++i) {
      for (int v = 0; v < 11; ++v) CHECK(out.at(i * 11 + v) == base.at(i * 11 + v));
    }
    bool moved = false;
    for (int i = pos + 1; i < 7; ++i) {
      for (int v = 0; v < 11; ++v) moved = moved || out.at(i * 11 + v) != base.at(i * 11 + v);
    }
    if (pos < 6) CHECK(moved);
  }
  // A prefix call agrees with the full sequence.
  const auto prefix = tf.logits(cond, std::span<const int>(tokens).first(4), 4);
  for (int k = 0; k < 4 * 11; ++k) CHECK(prefix.at(k) == doctest::Approx(base.at(k)).epsilon(1e-12));
}

TEST_CASE("transformer contracts") {
  Rng rng(2);
  ad::ParamStore ps;
  CausalTransformer tf(ps, "tf", {1, 2, 8, 6}, 5, rng);
  const std::vector<int> t4{1, 2, 3, 4};
  CHECK_THROWS_AS(tf.logits(ad::Tensor::zeros({1, 0, 8}), t4, 4), DomainError);
  CHECK_THROWS_AS(tf.logits(ad::Tensor::zeros({1, 4, 8}), t4, 4), DomainError);  // 7 > context
  CHECK_THROWS_AS(tf.logits(ad::Tensor::zeros({1, 2, 7}), t4, 4), ShapeError);
  CHECK_THROWS_AS(tf.logits(ad::Tensor::zeros({1, 2, 8}), std::vector<int>{1, 9}, 2), DomainError);
  CHECK_NOTHROW(tf.logits(ad::Tensor::zeros({1, 3, 8}), t4, 4));
}

TEST_CASE("global sampler gradients: NLL and contrastive term") {
  Rng rng(3);
  GlobalConfig cfg;
  cfg.transformer = tiny();
  cfg.knn = 2;
  cfg.tau = 0.5;
  GlobalSampler s(cfg, 6, 2, 3, 5, 4);
  jitter_biases(s.params(), rng);
  embedding::EmbeddingStore store(5);
  for (int i = 0; i < 6; ++i) store.add(std::to_string(i), unit(5, rng));
  std::vector<GlobalExample> batch(3);
  std::vector<embedding::ConditionBundle> conds;
  for (auto& ex : batch) {
    ex.tokens = vq::TokenGrid(2, 3);
    for (auto& v : ex.tokens.indices) v = static_cast<int>(uniform_index(rng, 6));
    ex.image_embedding = unit(5, rng);
    conds.push_back(s.training_condition(ex.image_embedding, store, rng));
  }
  const auto l = s.loss(batch, conds);
  CHECK(std::isfinite(l.nll));
  CHECK(l.con != 0);
  const auto r = check_gradients([&] { return s.loss(batch, conds).total; }, s.params().tensors());
  MESSAGE("global rel error " << r.rel_error);
  CHECK(r.rel_error < 1e-4);

}

TEST_CASE("local sampler gradients") {
  Rng rng(5);
  LocalConfig cfg;
  cfg.transformer = {1, 2, 8, 40};
  cfg.octaves = 2;
  LocalSampler s(cfg, 7, 4, 2, 2, 2, 4, 6);
  jitter_biases(s.params(), rng);
  std::vector<LocalExample> batch;
  for (int b = 0; b < 2; ++b) {
    LocalExample ex;
    ex.tokens = vq::TokenGrid(2, 2);
    for (auto& v : ex.tokens.indices) v = static_cast<int>(uniform_index(rng, 7));
    ex.global = vq::TokenGrid(2, 4);
    for (auto& v : ex.global.indices) v = static_cast<int>(uniform_index(rng, 4));
    ex.spe = window_spe(b, 2 * b, 2, 2, 16, 64, 128, 2);
    batch.push_back(ex);
  }
  const auto r = check_gradients([&] { return s.loss(batch); }, s.params().tensors());
  MESSAGE("local rel error " << r.rel_error);
  CHECK(r.rel_error < 1e-4);
}

TEST_CASE("local sampler contracts") {
  LocalConfig cfg;
  cfg.transformer = {1, 2, 8, 40};
  cfg.octaves = 2;
  cfg.no_sp = true;
  // No holistic tokens and no SPE leaves nothing to condition on.
  CHECK_THROWS_AS(LocalSampler(cfg, 7, 4, 2, 2, 0, 0, 1), DomainError);
  cfg.no_sp = false;
  LocalSampler s(cfg, 7, 4, 2, 2, 2, 4, 1);
  CHECK(s.condition_length() == 8 + 4);
  LocalExample ex;
  ex.tokens = vq::TokenGrid(2, 2);
  ex.global = vq::TokenGrid(2, 4);
  ex.spe = window_spe(0, 0, 2, 3, 16, 64, 128, 2);  // 2x3 encodings for a 2x2 window
  CHECK_THROWS_AS(s.loss({&ex, 1}), ShapeError);
  ex.spe = window_spe(0, 0, 2, 2, 16, 64, 128, 4);  // wrong octave count
  CHECK_THROWS_AS(s.loss({&ex, 1}), ShapeError);
  ex.spe = window_spe(0, 0, 2, 2, 16, 64, 128, 2);
  CHECK_NOTHROW(s.loss({&ex, 1}));
  ex.global = vq::TokenGrid(1, 4);
  CHECK_THROWS_AS(s.loss({&ex, 1}), ShapeError);
  ex.global = vq::TokenGrid(2, 4);
  cfg.no_sp = true;
  CHECK(LocalSampler(cfg, 7, 4, 2, 2, 2, 4, 1).condition_length() == 8);
  cfg.no_sp = false;
  cfg.no_spe = true;
  CHECK(LocalSampler(cfg, 7, 4, 2, 2, 2, 4, 1).condition_length() == 8 + 4);
  // Only the Fourier channels are blanked; raw angles still reach the condition.
  LocalSampler blind(cfg, 7, 4, 2, 2, 2, 4, 1);
  auto a = window_spe(0, 0, 2, 2, 16, 64, 128, 2);
  auto b = a;
  for (std::size_t k = 0; k < b.data.size(); ++k) {
    if (k % b.channels() >= 2) b.data[k] += 0.5;
  }
  const auto ca = blind.condition({&ex.global, 1}, {&a, 1});
  CHECK(std::ranges::equal(ca.data(), blind.condition({&ex.global, 1}, {&b, 1}).data()));
  b.data[0] += 0.5;
  CHECK(!std::ranges::equal(ca.data(), blind.condition({&ex.global, 1}, {&b, 1}).data()));
}
