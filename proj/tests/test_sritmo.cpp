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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support/grad_check.hpp"
#include "t2l/sritmo.hpp"

using namespace t2l;
using namespace t2l::sritmo;
using t2l::testing::check_gradients;
using t2l::testing::random_tensor;

static_assert(std::is_same_v<Real, double>);

namespace {

SrItmoConfig tiny(bool single = false) {
  SrItmoConfig c;
  c.latent_dim = 4;
  c.encoder_layers = 4;
  c.encoder_width = 4;
  c.sr_layers = 4;
  c.sr_hidden = 6;
  c.itmo_layers = 2;
  c.itmo_hidden = 5;
  c.single_mlp = single;
  return c;
}

void jitter_biases(ad::ParamStore& ps, Rng& rng) {
  for (auto [name, t] : ps.items()) {
    if (name.ends_with(".bias")) {
      for (auto& x : t.data()) x = uniform(rng, -0.1, 0.1);
    }
  }
}

LdrImage random_ldr(int h, int w, Rng& rng) {
  LdrImage img(h, w);
  for (auto& v : img.values()) v = static_cast<float>(uniform01(rng));
  return img;
}

}  // namespace

TEST_CASE("area weights") {
  SUBCASE("at an anchor") {
    const auto s = area_weights(2, 1, 4, 5);
    double at_anchor = 0;
    for (int k = 0; k < 4; ++k) {
      if (s.index[k] == 1 * 5 + 2) at_anchor += s.weight[k];
    }
    CHECK(at_anchor == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("at a cell centroid") {
    const auto s = area_weights(1.5, 2.5, 4, 5);
    for (double w : s.weight) CHECK(w == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("bilinear oracle on random queries") {
    Rng rng(1);
    for (int t = 0; t < 10000; ++t) {
      const int rows = 2 + static_cast<int>(uniform_index(rng, 8));
      const int cols = 2 + static_cast<int>(uniform_index(rng, 8));
      const double u = uniform(rng, 0, cols - 1), v = uniform(rng, 0, rows - 1);
      const auto s = area_weights(u, v, rows, cols);
      // Independent oracle: separable linear hats max(0, 1 - |x - x_k|).
      double sum = 0;
      for (int k = 0; k < 4; ++k) {
        const int i = s.index[k] / cols, j = s.index[k] % cols;
        const double hat = std::max(0.0, 1 - std::abs(u - j)) * std::max(0.0, 1 - std::abs(v - i));
        CHECK(s.weight[k] >= 0);
        CHECK(std::abs(s.weight[k] - hat) < 1e-12);
        sum += s.weight[k];
      }
      CHECK(std::abs(sum - 1) < 1e-12);
    }
  }
  SUBCASE("clamping") {
    const auto s = area_weights(-3, 10, 4, 5);
    double w = 0;
    for (int k = 0; k < 4; ++k) {
      if (s.index[k] == 3 * 5 + 0) w += s.weight[k];
    }
    CHECK(w == doctest::Approx(1.0));
    CHECK_THROWS_AS(area_weights(0, 0, 1, 5), DomainError);
  }
}

TEST_CASE("latent grid geometry") {
  const sphere::PatchGeometry e{10, 250, 32, 32, 128, 256};  // wraps the seam
  // Anchors map back to integer local positions.
  for (int i = 0; i < 16; i += 5) {
    for (int j = 0; j < 16; j += 3) {
      const auto lp = local_position(anchor_coord(i, j, e, 16, 16), e, 16, 16);
      CHECK(lp.u == doctest::Approx(j).epsilon(1e-9));
      CHECK(lp.v == doctest::Approx(i).epsilon(1e-9));
    }
  }
  // phi increases down the rows; theta increases along the columns away from the seam.
  const sphere::PatchGeometry flat{10, 20, 32, 32, 128, 256};
  for (int k = 0; k + 1 < 16; ++k) {
    CHECK(anchor_coord(k + 1, 3, flat, 16, 16).phi > anchor_coord(k, 3, flat, 16, 16).phi);
    CHECK(anchor_coord(3, k + 1, flat, 16, 16).theta > anchor_coord(3, k, flat, 16, 16).theta);
  }

  LatentGrid g;
  g.rows = 3;
  g.cols = 4;
  g.dim = 2;
  g.extent = flat;
  for (int k = 0; k < 24; ++k) g.values.push_back(k * 0.5);
  const auto z = interpolate(g, g.anchor(1, 2));
  CHECK(z[0] == doctest::Approx(g.code(1, 2)[0]));
  CHECK(z[1] == doctest::Approx(g.code(1, 2)[1]));
}

TEST_CASE("encoder is pixel aligned") {
  SrItmoModel m(tiny(), 1);
  LdrImage flat(12, 12, 0.4f);
  const auto g = m.encode_latents(flat, {0, 0, 12, 12, 64, 128});
  CHECK(g.rows == 12);
  CHECK(g.cols == 12);
  // Interior positions (away from the zero-padded border) share one code.
  const int margin = tiny().encoder_layers;
  for (int i = margin / 2 + 1; i < 12 - margin / 2 - 1; ++i) {
    for (int j = margin / 2 + 1; j < 12 - margin / 2 - 1; ++j) {
      for (int c = 0; c < g.dim; ++c) CHECK(g.code(i, j)[c] == doctest::Approx(g.code(5, 5)[c]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(m.encode_latents(LdrImage(1, 5), {0, 0, 1, 5, 64, 128}), DomainError);
  SrItmoModel big(SrItmoConfig{}, 1);
  Rng rng(2);
  const auto g2 = big.encode_latents(random_ldr(32, 32, rng), {0, 0, 32, 32, 64, 128});
  CHECK(g2.rows == 32);
  CHECK(g2.dim == 64);
}

TEST_CASE("query shapes and determinism") {
  SrItmoModel m(SrItmoConfig{}, 3);
  Rng rng(3);
  const auto z = random_tensor({5, 64}, rng, -1, 1, false);
  const auto coords = random_tensor({5, 2}, rng, -1, 1, false);
  const auto [ldr, c_hr] = m.query_sr(z);
  CHECK(ldr.shape() == ad::Shape{5, 3});
  CHECK(c_hr.shape() == ad::Shape{5, 256});
  const auto again = m.query_sr(z);
  CHECK(std::equal(ldr.data().begin(), ldr.data().end(), again.first.data().begin()));
  const auto hdr = m.query_hdr(c_hr, coords);
  CHECK(hdr.shape() == ad::Shape{5, 3});
  for (Real v : hdr.data()) CHECK(std::exp(v) > 0);
  SrItmoModel single(tiny(true), 3);
  CHECK_THROWS_AS(single.query_sr(random_tensor({1, 4}, rng)), DomainError);
}

TEST_CASE("L_sr") {
  const auto pred = ad::Tensor::from({2, 3}, {0.5, 0.5, 0.5, 0.2, 0.2, 0.2});
  CHECK(loss_sr(pred, std::vector<Real>{0.5, 0.5, 0.5, 0.2, 0.2, 0.2}).item() == 0);
  const auto one = ad::Tensor::from({1, 3}, {0.6, 0.7, 0.8}, true);
  const auto l = loss_sr(one, std::vector<Real>{0.5, 0.6, 0.9});
  CHECK(l.item() == doctest::Approx(0.3));
  l.backward();
  CHECK(one.grad()[0] == doctest::Approx(1.0));
  CHECK(one.grad()[1] == doctest::Approx(1.0));
  CHECK(one.grad()[2] == doctest::Approx(-1.0));
  CHECK_THROWS_AS(loss_sr(ad::Tensor::zeros({0, 3}), std::vector<Real>{}), DomainError);
}

TEST_CASE("L_itmo") {
  SUBCASE("hand instance: log ratios {0, 2} have variance 1") {
    const auto pred = ad::Tensor::from({2, 1}, {1.0, std::exp(2.0)});
    CHECK(loss_itmo(pred, std::vector<Real>{1, 1}).item() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("scale invariance and nonnegativity") {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
      std::vector<Real> p(30), g(30);
      for (auto& x : p) x = std::exp(uniform(rng, -3, 3));
      for (auto& x : g) x = std::exp(uniform(rng, -3, 3));
      const double base = loss_itmo(ad::Tensor::from({10, 3}, p), g).item();
      CHECK(base >= 0);
      for (double kappa : {1e-3, 1.0, 1e3}) {
        auto q = p;
        for (auto& x : q) x *= kappa;
        CHECK(std::abs(loss_itmo(ad::Tensor::from({10, 3}, q), g).item() - base) < 1e-10);
      }
      CHECK(loss_itmo(ad::Tensor::from({10, 3}, g), g).item() == doctest::Approx(0).epsilon(1e-15));
    }
  }
  SUBCASE("errors and clamping") {
    CHECK_THROWS_AS(loss_itmo(ad::Tensor::from({2, 1}, {1.0, 0.0}), std::vector<Real>{1, 1}), DomainError);
    CHECK_THROWS_AS(loss_itmo(ad::Tensor::from({2, 1}, {1.0, 1.0}), std::vector<Real>{1, -1}), DomainError);
    CHECK_THROWS_AS(loss_itmo(ad::Tensor::from({1, 1}, {1.0}), std::vector<Real>{1}), DomainError);
    const double l = loss_itmo(ad::Tensor::from({2, 1}, {1e-6, 1.0}), std::vector<Real>{0.0, 1.0}).item();
    CHECK(l == doctest::Approx(0).epsilon(1e-12));
  }
}

TEST_CASE("SR-iTMO gradients") {
  Rng rng(5);
  SUBCASE("f_sr and f_itmo") {
    SrItmoModel m(tiny(), 6);
    jitter_biases(m.params(), rng);
    auto z = random_tensor({6, 4}, rng);
    auto coords = random_tensor({6, 2}, rng, -1.5, 1.5);
    std::vector<Real> gl(18), gh(18);
    for (auto& x : gl) x = uniform01(rng);
    for (auto& x : gh) x = std::exp(uniform(rng, -2, 2));
    auto loss = [&] {
      const auto q = m.query(z, coords);
      return ad::add(loss_sr(q.ldr, gl), loss_itmo_log(q.log_hdr, gh));
    };
    auto params = m.params().tensors();
    params.push_back(z);
    params.push_back(coords);
    const auto r = check_gradients(loss, params);
    MESSAGE("query rel error " << r.rel_error);
    CHECK(r.rel_error < 1e-4);

    // Gradient with respect to (theta, phi) alone.
    const auto rc = check_gradients([&] { return ad::sum(m.query(z, coords).log_hdr); }, {coords});
    CHECK(rc.rel_error < 1e-6);
    CHECK(rc.max_abs_numeric > 0);
  }
  SUBCASE("end to end through encoder and interpolation") {
    for (bool single : {false, true}) {
      SrItmoModel m(tiny(single), 7);
      jitter_biases(m.params(), rng);
      const auto pano = data::prepare_pano(
          data::synth_pano(data::random_scene(data::SceneClass::kSunDisk, rng), 32, 64), {.base = 4});
      const auto pairs = data::build_pairs(pano, 2, rng, {.base = 4}, "g");
      const auto r = check_gradients([&] { return pair_loss(m, pairs).total; }, m.params().tensors());
      MESSAGE("pair loss rel error " << r.rel_error << std::string(single ? " (single MLP)" : ""));
      CHECK(r.rel_error < 1e-4);
    }
  }
}

TEST_CASE("upscale lattice") {
  SrItmoModel m(tiny(), 8);
  Rng rng(9);
  const auto lr = random_ldr(32, 32, rng);
  const sphere::PatchGeometry e{0, 0, 64, 64, 128, 256};
  const auto x8 = upscale(m, lr, 8.0, e);
  CHECK(x8.ldr.height() == 256);
  CHECK(x8.hdr.width() == 256);
  for (float v : x8.hdr.values()) {
    CHECK(std::isfinite(v));
    CHECK(v > 0);
  }
  const auto x25 = upscale(m, lr, 2.5, e);
  CHECK(x25.ldr.height() == 80);
  CHECK(x25.ldr.width() == 80);
  CHECK_THROWS_AS(upscale(m, lr, 0.5, e), DomainError);
  const auto whole = upscale(m, random_ldr(8, 16, rng), 2.0);
  CHECK(whole.hdr.height() == 16);
  CHECK(whole.hdr.width() == 32);
}

TEST_CASE("metrics") {
  const std::vector<float> a{0.1f, 0.2f, 0.3f}, b{0.1f, 0.2f, 0.4f};
  CHECK(psnr(a, b) == doctest::Approx(10 * std::log10(3 / 0.01)).epsilon(1e-5));
  CHECK(std::isinf(psnr(a, a)));
  std::vector<float> scaled{0.2f, 0.4f, 0.6f};
  CHECK(aligned_log_rmse(scaled, a) < 1e-6);
  CHECK(aligned_log_rmse(b, a) > 0.05);
}
