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

// Built against the double-precision library.

#include <algorithm>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "support/grad_check.hpp"
#include "t2l/vq.hpp"

using namespace t2l;
using ad::Tensor;
using t2l::testing::check_gradients;
using t2l::testing::random_tensor;

namespace {

// Independent nearest-entry oracle: explicit scan with a strict comparison.
int brute_nearest(const std::vector<double>& q, const std::vector<double>& table, int dim) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int e = 0; e < static_cast<int>(table.size()) / dim; ++e) {
    double d = 0;
    for (int c = 0; c < dim; ++c) d += (q[c] - table[e * dim + c]) * (q[c] - table[e * dim + c]);
    if (d < best_d) {
      best_d = d;
      best = e;
    }
  }
  return best;
}

vq::TokenizerConfig tiny(int h, int w, int stages, bool circular) {
  vq::TokenizerConfig c;
  c.height = h;
  c.width = w;
  c.stages = stages;
  c.base_channels = 4;
  c.max_channels = 8;
  c.code_dim = 6;
  c.codebook_size = 16;
  c.circular = circular;
  return c;
}

LdrImage random_image(int h, int w, Rng& rng) {
  LdrImage img(h, w);
  for (auto& v : img.values()) v = static_cast<float>(uniform01(rng));
  return img;
}

}  // namespace

TEST_CASE("quantize picks the nearest entry with lowest-index ties") {
  const auto table = Tensor::from({2, 2}, {0, 0, 1, 1});
  CHECK(vq::quantize(Tensor::from({1, 2}, {0.2, 0.1}), table).indices[0] == 0);
  const auto exact = vq::quantize(Tensor::from({1, 2}, {1, 1}), table);
  CHECK(exact.indices[0] == 1);
  CHECK(exact.zq.at(0) == 1);
  CHECK(exact.zq.at(1) == 1);
  CHECK(vq::quantize(Tensor::from({1, 2}, {0.5, 0.5}), table).indices[0] == 0);
  CHECK_THROWS_AS(vq::quantize(Tensor::from({1, 3}, {0, 0, 0}), table), ShapeError);
}

TEST_CASE("quantize agrees with a brute-force scan on random instances") {
  Rng rng(11);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int dim = 1 + static_cast<int>(uniform_index(rng, 6));
    const int k = 2 + static_cast<int>(uniform_index(rng, 20));
    std::vector<double> table(static_cast<std::size_t>(k) * dim), q(dim);
    for (auto& v : table) v = standard_normal(rng);
    for (auto& v : q) v = standard_normal(rng);
    // Occasionally duplicate an entry to exercise the tie rule.
    if (trial % 7 == 0) std::copy_n(table.begin(), dim, table.end() - dim);
    const auto idx = vq::nearest_entries(q, table, dim);
    mismatches += idx[0] != brute_nearest(q, table, dim);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("vq loss terms on a hand-sized instance") {
  // 1x1 grid, two code channels; the decoder is a fixed linear read-out so
  // only the quantization terms matter.
  const auto table = Tensor::from({2, 2}, {3, 4, -5, 0});
  const auto z_hat = Tensor::from({1, 2}, {0, 0}, true);
  const auto image = Tensor::from({1, 2}, {3, 4});
  const auto parts = vq::vq_loss(image, z_hat, table, 0.25, [](const Tensor& r) { return r; });
  CHECK(parts.indices[0] == 0);
  CHECK(parts.codebook == doctest::Approx(25.0));  // |(3,4) - (0,0)|^2
  CHECK(parts.commit == doctest::Approx(25.0));
  CHECK(parts.rec == doctest::Approx(0.0));
  CHECK(parts.total.item() == doctest::Approx(25.0 + 0.25 * 25.0));

  // Perfect autoencoder on a representable input: every term vanishes.
  const auto on_entry = Tensor::from({1, 2}, {-5, 0}, true);
  const auto perfect = vq::vq_loss(Tensor::from({1, 2}, {-5, 0}), on_entry, table, 0.25,
                                   [](const Tensor& r) { return r; });
  CHECK(perfect.total.item() == 0.0);
}

TEST_CASE("vq loss gradients") {
  Rng rng(5);
  vq::Tokenizer tok(tiny(8, 16, 2, true), 9);
  const auto img = vq::images_to_tensor(std::vector<LdrImage>{random_image(8, 16, rng)});
  // Zero biases put dead ReLU inputs exactly on the kink; move them off it.
  for (auto [name, t] : tok.params().items()) {
    if (name.ends_with(".bias")) {
      for (auto& v : t.data()) v = uniform(rng, -0.1, 0.1);
    }
  }

  // Decoder parameters see an ordinary smooth loss for fixed indices. The
  // codebook and encoder do not: the forward pass depends on them through
  // the quantized value while the gradient follows the identity path.
  std::vector<Tensor> smooth;
  for (const auto& [name, t] : tok.params().items()) {
    if (name.rfind("dec.", 0) == 0) smooth.push_back(t);
  }
  const auto r = check_gradients([&] { return tok.loss(img).total; }, smooth);
  CHECK(r.rel_error < 1e-4);

  // Encoder weights receive the straight-through gradient. Its oracle is the
  // derivative of the loss with every stopped quantity frozen at its current
  // value: the offset z_q - z_hat and sg(z_hat) itself.
  const auto base = tok.loss(img);
  const auto zq = ad::embedding_lookup(tok.codebook(), base.indices);
  const auto offset = ad::detach(ad::sub(zq, base.z_hat));
  const auto z_frozen = ad::detach(base.z_hat);
  const auto& cfg = tok.config();
  auto surrogate = [&] {
    const auto z = nn::nchw_to_rows(tok.encode_latent(img));
    const auto q = ad::embedding_lookup(tok.codebook(), base.indices);
    const auto rec = tok.decode_latent(nn::rows_to_nchw(ad::add(z, offset), 1, cfg.token_rows(),
                                                        cfg.token_cols()));
    const auto n = static_cast<double>(z.dim(0));
    const auto l_rec = ad::mean(ad::abs(ad::sub(rec, img)));
    const auto l_cb = ad::scale(ad::sum(ad::square(ad::sub(ad::detach(q), z))), 1 / n);
    const auto l_cm = ad::scale(ad::sum(ad::square(ad::sub(z_frozen, q))), 1 / n);
    return ad::add(ad::add(l_rec, l_cb), ad::scale(l_cm, cfg.beta));
  };
  std::vector<Tensor> enc;
  for (const auto& [name, t] : tok.params().items()) {
    if (name.rfind("enc.", 0) == 0) enc.push_back(t);
  }
  for (auto& t : enc) t.zero_grad();
  tok.loss(img).total.backward();
  std::vector<std::vector<double>> st;
  for (const auto& t : enc) st.push_back(t.grad_or_zeros());
  const auto rs = check_gradients(surrogate, enc);
  CHECK(rs.rel_error < 1e-4);
  // The surrogate's analytic gradient is the straight-through one.
  for (std::size_t k = 0; k < enc.size(); ++k) {
    for (auto& t : enc) t.zero_grad();
    surrogate().backward();
    const auto g = enc[k].grad_or_zeros();
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(g[i] == doctest::Approx(st[k][i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("tokenizer shape contracts") {
  Rng rng(2);
  SUBCASE("full-scale global 128x256 -> 8x16") {
    vq::Tokenizer tok(tiny(128, 256, 4, true), 1);
    const auto g = tok.encode(random_image(128, 256, rng));
    CHECK(g.rows == 8);
    CHECK(g.cols == 16);
    const auto back = tok.decode(g);
    CHECK(back.height() == 128);
    CHECK(back.width() == 256);
  }
  SUBCASE("full-scale local 256x256 -> 16x16") {
    vq::Tokenizer tok(tiny(256, 256, 4, false), 1);
    const auto g = tok.encode(random_image(256, 256, rng));
    CHECK(g.rows == 16);
    CHECK(g.cols == 16);
  }
  SUBCASE("desk local 64x64 -> 4x4 and desk global 32x64 -> 4x8") {
    vq::Tokenizer local(tiny(64, 64, 4, false), 1);
    const auto g = local.encode(random_image(64, 64, rng));
    CHECK(g.rows == 4);
    CHECK(g.cols == 4);
    CHECK(local.decode(g).height() == 64);
    vq::Tokenizer global(tiny(32, 64, 3, true), 1);
    const auto gg = global.encode(random_image(32, 64, rng));
    CHECK(gg.rows == 4);
    CHECK(gg.cols == 8);
  }
  SUBCASE("wrong resolution is rejected") {
    vq::Tokenizer tok(tiny(32, 64, 3, true), 1);
    CHECK_THROWS_AS(tok.encode(random_image(32, 32, rng)), DomainError);
    CHECK_THROWS_AS(tok.decode(vq::TokenGrid(2, 2)), DomainError);
    CHECK_THROWS_AS(vq::Tokenizer(tiny(30, 64, 3, true), 1), DomainError);
  }
}

TEST_CASE("circular global tokenizer commutes with whole-token rotations") {
  Rng rng(8);
  vq::Tokenizer tok(tiny(16, 32, 2, true), 4);
  const auto img = random_image(16, 32, rng);
  const auto g = tok.encode(img);
  const auto dec = tok.decode(g);
  const int f = tok.config().factor();
  for (int k : {1, 3, 7}) {
    const auto gs = tok.encode(rotate_horizontal(img, f * k));
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) CHECK(gs.at(r, (c + k) % g.cols) == g.at(r, c));
    }
    const auto ds = tok.decode(gs);
    const auto expect = rotate_horizontal(dec, f * k);
    float worst = 0;
    for (std::size_t i = 0; i < ds.values().size(); ++i) {
      worst = std::max(worst, std::abs(ds.values()[i] - expect.values()[i]));
    }
    CHECK(worst < 1e-6f);
  }
}

TEST_CASE("training is deterministic, reseeds dead entries and allows one entry") {
  Rng rng(3);
  std::vector<LdrImage> data{random_image(8, 16, rng), random_image(8, 16, rng)};
  auto cfg = tiny(8, 16, 2, true);
  cfg.dead_after = 3;
  vq::TrainConfig tc;
  tc.steps = 12;
  tc.batch = 2;
  auto run = [&] {
    vq::Tokenizer tok(cfg, 6);
    return vq::train_tokenizer(tok, data, tc);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.loss == b.loss);
  CHECK(a.reseeded > 0);

  auto one = cfg;
  one.codebook_size = 1;
  vq::Tokenizer tok(one, 2);
  vq::train_tokenizer(tok, data, tc);
  const auto g = tok.encode(data[0]);
  CHECK(std::all_of(g.indices.begin(), g.indices.end(), [](int i) { return i == 0; }));
  // One atom everywhere: every token decodes from the same code vector.
  CHECK(tok.decode(g) == tok.decode(tok.encode(data[1])));

  CHECK_THROWS_AS(vq::train_tokenizer(tok, std::span<const LdrImage>{}, tc), DomainError);
}

TEST_CASE("tokenizer parameters survive a checkpoint roundtrip") {
  Rng rng(4);
  const auto img = random_image(8, 16, rng);
  vq::Tokenizer a(tiny(8, 16, 2, true), 1);
  vq::Tokenizer b(tiny(8, 16, 2, true), 2);
  const auto path = std::filesystem::temp_directory_path() / "t2l_vq_test.ckpt";
  a.params().save(path);
  b.params().load(path);
  a.params().load(path);  // both now hold the f32-rounded values
  std::filesystem::remove(path);
  CHECK(a.encode(img) == b.encode(img));
}
