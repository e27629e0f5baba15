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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "support/grad_check.hpp"
#include "t2l/contrastive.hpp"
#include "t2l/datapipe.hpp"
#include "t2l/embedding.hpp"

using namespace t2l;
using namespace t2l::embedding;
using t2l::contrastive::contrastive_loss;
using t2l::contrastive::kDefaultTau;
using ad::Tensor;

namespace {

Vector random_unit(int dim, Rng& rng) {
  Vector v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = static_cast<float>(standard_normal(rng));
  normalize(v);
  return v;
}

}  // namespace

TEST_CASE("toy embedders are deterministic and unit norm") {
  const auto a = toy_text_embed("blue sky");
  const auto b = toy_text_embed("blue sky");
  CHECK(a == b);
  CHECK(cosine(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(norm(a) - 1) < 1e-6);
  CHECK(toy_text_embed("Blue, SKY!") == a);  // tokenization ignores case and punctuation
  CHECK(cosine(a, toy_text_embed("dim indoor room")) < 0.9);
  CHECK_THROWS_AS(toy_text_embed(""), DomainError);
  CHECK_THROWS_AS(toy_text_embed("  ,;  "), DomainError);

  Rng rng(3);
  data::SceneSpec spec = data::random_scene(data::SceneClass::kSunDisk, rng);
  const auto ldr = reinhard_tonemap(data::synth_pano(spec, 32, 64));
  const auto e1 = toy_image_embed(ldr);
  CHECK(e1 == toy_image_embed(ldr));
  CHECK(std::abs(norm(e1) - 1) < 1e-6);
  CHECK(e1.size() == static_cast<std::size_t>(kToyDim));
  CHECK(toy_image_embed(ldr, 512).size() == 512u);
}

TEST_CASE("procedural classes separate under the toy image embedder") {
  data::CorpusConfig cfg;
  cfg.height = 32;
  cfg.width = 64;
  cfg.scenes_per_class = 6;
  const auto scenes = data::make_scenes(cfg);
  std::vector<Vector> emb;
  for (const auto& s : scenes) {
    emb.push_back(toy_image_embed(reinhard_tonemap(data::synth_pano(s.spec, cfg.height, cfg.width))));
  }
  double within = 0, cross = 0;
  int nw = 0, nc = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (std::size_t j = i + 1; j < scenes.size(); ++j) {
      const double c = cosine(emb[i], emb[j]);
      if (scenes[i].spec.cls == scenes[j].spec.cls) {
        within += c, ++nw;
      } else {
        cross += c, ++nc;
      }
    }
  }
  within /= nw;
  cross /= nc;
  MESSAGE("within-class " << within << ", cross-class " << cross);
  CHECK(within > cross + 0.1);
  // Class tags are distinct texts.
  for (auto a : data::kAllClasses) {
    for (auto b : data::kAllClasses) {
      if (a != b) {
        CHECK(cosine(toy_text_embed(data::class_tag(a)), toy_text_embed(data::class_tag(b))) < 0.95);
      }
    }
  }
}

TEST_CASE("pseudo text feature") {
  Rng rng(11);
  const auto v = random_unit(64, rng);
  std::vector<double> noise(64);
  for (auto& e : noise) e = standard_normal(rng);

  SUBCASE("alpha zero is the identity") {
    const auto c = pseudo_text_feature(v, 0.0, noise);
    for (std::size_t k = 0; k < v.size(); ++k) CHECK(c[k] == doctest::Approx(v[k]).epsilon(1e-6));
  }
  SUBCASE("alpha 0.25 mixes 0.75 v with 0.25 unit noise, then renormalizes") {
    double en = 0;
    for (double e : noise) en += e * e;
    en = std::sqrt(en);
    Vector expect(64);
    for (std::size_t k = 0; k < 64; ++k) expect[k] = static_cast<float>(0.75 * v[k] + 0.25 * noise[k] / en);
    normalize(expect);
    const auto c = pseudo_text_feature(v, kDefaultAlpha, noise);
    for (std::size_t k = 0; k < 64; ++k) CHECK(c[k] == doctest::Approx(expect[k]).epsilon(1e-6));
    CHECK(std::abs(norm(c) - 1) < 1e-6);
  }
  SUBCASE("Monte Carlo: cos > 0.6 for at least 99% of draws") {
    int good = 0;
    for (int t = 0; t < 1000; ++t) good += cosine(pseudo_text_feature(v, 0.25, rng), v) > 0.6;
    CHECK(good >= 990);
  }
  SUBCASE("seeded draws repeat") {
    Rng a(5), b(5);
    CHECK(pseudo_text_feature(v, 0.25, a) == pseudo_text_feature(v, 0.25, b));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(pseudo_text_feature(v, 1.0, noise), DomainError);
    CHECK_THROWS_AS(pseudo_text_feature(v, -0.1, noise), DomainError);
    CHECK_THROWS_AS(pseudo_text_feature(v, 0.25, std::vector<double>(64, 0.0)), DomainError);
    CHECK_THROWS_AS(pseudo_text_feature(v, 0.25, std::vector<double>(3, 1.0)), ShapeError);
  }
}

TEST_CASE("knn matches a brute-force scan") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingStore store(16);
    for (int i = 0; i < 50; ++i) store.add("k" + std::to_string(i), random_unit(16, rng));
    const auto q = random_unit(16, rng);
    const auto got = store.knn(q, 5);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < store.size(); ++i) all.push_back({-cosine(q, store.vector(i)), i});
    std::sort(all.begin(), all.end());
    REQUIRE(got.size() == 5u);
    for (int k = 0; k < 5; ++k) {
      CHECK(got[k].index == all[k].second);
      CHECK(got[k].similarity == -all[k].first);
    }
  }
}

TEST_CASE("knn condition bundles") {
  Rng rng(2);
  EmbeddingStore store(8);
  for (int i = 0; i < 6; ++i) store.add("s" + std::to_string(i), random_unit(8, rng));
  const Vector q(store.vector(3).begin(), store.vector(3).end());

  const auto nb = store.knn(q, 1);
  CHECK(nb[0].index == 3u);
  CHECK(nb[0].similarity == doctest::Approx(1.0));

  const auto all = store.knn(q, 6);
  CHECK(all.size() == 6u);
  for (std::size_t k = 1; k < all.size(); ++k) CHECK(all[k - 1].similarity >= all[k].similarity);

  const auto text = random_unit(8, rng);
  const auto b = knn_condition(q, store, 5, text);
  REQUIRE(b.size() == 6u);
  CHECK(b.knn_count == 5);
  CHECK(b.vectors[0] == q);
  CHECK(b.vectors.back() == text);  // text slot last
  CHECK(knn_condition(q, store, 0).size() == 1u);
  CHECK_THROWS_AS(knn_condition(q, store, 7), DomainError);

  // Ties keep insertion order.
  EmbeddingStore ties(2);
  ties.add("b", {1, 0});
  ties.add("a", {1, 0});
  ties.add("c", {0, 1});
  const auto t = ties.knn(Vector{1, 0}, 2);
  CHECK(t[0].index == 0u);
  CHECK(t[1].index == 1u);

  CHECK_THROWS_AS(ties.add("a", {0, 1}), DomainError);
  CHECK_THROWS_AS(ties.add("z", {0, 1, 0}), ShapeError);
}

TEST_CASE("store files") {
  const auto dir = std::filesystem::temp_directory_path() / "t2l_test_embedding";
  std::filesystem::create_directories(dir);
  Rng rng(8);

  SUBCASE("roundtrip is bitwise") {
    EmbeddingStore s(64);
    for (int i = 0; i < 7; ++i) s.add("item " + std::to_string(i), random_unit(64, rng));
    save_store(s, dir / "s.t2lemb");
    const auto r = load_store(dir / "s.t2lemb");
    REQUIRE(r.size() == s.size());
    CHECK(r.dim() == 64);
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(r.key(i) == s.key(i));
      CHECK(std::memcmp(r.vector(i).data(), s.vector(i).data(), 64 * sizeof(float)) == 0);
    }
  }
  SUBCASE("header carries count and dim") {
    EmbeddingStore s(512);
    for (int i = 0; i < 10; ++i) s.add(std::to_string(i), random_unit(512, rng));
    const auto bytes = encode_store(s);
    REQUIRE(bytes.size() > 15);
    CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "T2LEMB1");
    auto u32 = [&](std::size_t at) {
      return bytes[at] | bytes[at + 1] << 8 | bytes[at + 2] << 16 | bytes[at + 3] << 24;
    };
    CHECK(u32(7) == 10);
    CHECK(u32(11) == 512);
    const auto r = decode_store(bytes);
    CHECK(r.size() == 10u);
    CHECK(r.dim() == 512);
  }
  SUBCASE("empty store") {
    const auto r = decode_store(encode_store(EmbeddingStore(4)));
    CHECK(r.size() == 0u);
  }
  SUBCASE("parse errors carry offsets and record indices") {
    EmbeddingStore s(4);
    for (int i = 0; i < 3; ++i) s.add("r" + std::to_string(i), random_unit(4, rng));
    auto bytes = encode_store(s);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_store(bad), ParseError);
    // Cut in the middle of the third record's vector.
    bad.assign(bytes.begin(), bytes.end() - 5);
    try {
      decode_store(bad);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("record 2") != std::string::npos);
      CHECK(e.offset() > 15);
    }
    bad.assign(bytes.begin(), bytes.begin() + 9);
    CHECK_THROWS_AS(decode_store(bad), ParseError);
    bad = bytes;
    bad.push_back(0);
    CHECK_THROWS_AS(decode_store(bad), ParseError);
    CHECK_THROWS_AS(load_store(dir / "missing.t2lemb"), IoError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("contrastive loss closed forms") {
  const double tau = kDefaultTau;
  SUBCASE("identical vectors give 2 tau ln 2") {
    const auto v = Tensor::from({2, 3}, {0.6, 0.8, 0, 0.6, 0.8, 0});
    CHECK(contrastive_loss(v, v, tau).item() == doctest::Approx(2 * tau * std::numbers::ln2).epsilon(1e-12));
  }
  SUBCASE("perfectly separated pairs are near zero") {
    const auto v = Tensor::from({2, 2}, {1, 0, -1, 0});
    const double l = contrastive_loss(v, v, tau).item();
    // Each row: -tau log(1 / (1 + exp(-2/tau))).
    const double expect = 2 * tau * std::log1p(std::exp(-2 / tau));
    CHECK(l == doctest::Approx(expect).epsilon(1e-9));
    CHECK(l < 1e-12);
  }
  SUBCASE("errors") {
    const auto one = Tensor::from({1, 2}, {1, 0});
    CHECK_THROWS_AS(contrastive_loss(one, one, tau), DomainError);
    const auto two = Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(contrastive_loss(two, two, 0.0), DomainError);
    CHECK_THROWS_AS(contrastive_loss(two, two, 1.5), DomainError);
    CHECK_THROWS_AS(contrastive_loss(two, Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0}), tau), ShapeError);
  }
}

TEST_CASE("contrastive loss gradients") {
  Rng rng(4);
  auto v = testing::random_tensor({5, 6}, rng);
  auto c = testing::random_tensor({5, 6}, rng);
  const auto r = testing::check_gradients([&] { return contrastive_loss(v, c, 0.3); }, {v, c});
  CHECK(r.rel_error < 1e-6);
  CHECK(r.max_abs_numeric > 1e-3);
}

TEST_CASE("descent on a four-vector toy reaches the brute-force minimum") {
  // Unit v_i in the plane; each condition is a unit vector at angle psi_i.
  // The loss splits into one term per row, so a fine grid per angle is an
  // exact-enough brute-force oracle.
  const double tau = 0.3;
  const std::array<double, 4> va{0.1, 1.4, 2.9, 4.0};
  std::vector<Real> vflat;
  for (double a : va) vflat.insert(vflat.end(), {std::cos(a), std::sin(a)});
  const auto v = Tensor::from({4, 2}, vflat);

  auto row_loss = [&](int i, double psi) {
    double denom = 0;
    for (int j = 0; j < 4; ++j) denom += std::exp(std::cos(psi - va[j]) / tau);
    return -tau * (std::cos(psi - va[i]) / tau - std::log(denom));
  };
  double brute = 0;
  for (int i = 0; i < 4; ++i) {
    double best = 1e300;
    for (int g = 0; g < 200000; ++g) best = std::min(best, row_loss(i, 2 * std::numbers::pi * g / 200000));
    brute += best;
  }

  Rng rng(9);
  auto psi = testing::random_tensor({4, 1}, rng, -3, 3);
  double last = 0;
  for (int step = 0; step < 2000; ++step) {
    psi.zero_grad();
    const auto c = ad::concat({ad::cos(psi), ad::sin(psi)}, 1);
    const auto loss = contrastive_loss(v, c, tau);
    last = loss.item();
    loss.backward();
    for (std::size_t k = 0; k < 4; ++k) psi.data()[k] -= 0.5 * psi.grad()[k];
  }
  MESSAGE("descent " << last << " vs brute force " << brute);
  CHECK(std::abs(last - brute) < 1e-3);
}
