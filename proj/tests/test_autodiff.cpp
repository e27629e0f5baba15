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

#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "support/grad_check.hpp"
#include "t2l/autodiff.hpp"
#include "t2l/nn.hpp"

using namespace t2l;
using ad::Tensor;
using t2l::testing::check_gradients;
using t2l::testing::random_tensor;

static_assert(std::is_same_v<Real, double>);

TEST_CASE("softmax and cross entropy basics") {
  const auto s = ad::softmax(Tensor::from({1, 2}, {0, 0}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));
  const int target = 0;
  const auto ce = ad::cross_entropy_with_logits(Tensor::from({1, 2}, {0, 0}), {&target, 1});
  CHECK(ce.item() == doctest::Approx(std::numbers::ln2));
  const int bad = 2;
  CHECK_THROWS_AS(ad::cross_entropy_with_logits(Tensor::from({1, 2}, {0, 0}), {&bad, 1}),
                  DomainError);
}

TEST_CASE("identity 1x1 convolution leaves the input unchanged") {
  Rng rng(1);
  auto x = random_tensor({2, 3, 4, 5}, rng, -1, 1, false);
  std::vector<Real> w(9, 0);
  for (int k = 0; k < 3; ++k) w[k * 3 + k] = 1;
  const auto y = ad::conv2d(x, Tensor::from({3, 3, 1, 1}, w), Tensor());
  REQUIRE(y.shape() == x.shape());
  for (std::size_t k = 0; k < x.numel(); ++k) CHECK(y.at(k) == x.at(k));
}

TEST_CASE("shape mismatches name both shapes") {
  try {
    ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(ad::log(Tensor::from({1}, {-1})), DomainError);
}

TEST_CASE("backward on simple sums") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  ad::sum(x).backward();
  CHECK(x.grad_or_zeros() == std::vector<double>{1, 1, 1});

  auto y = Tensor::from({2}, {1, 2}, true);
  ad::sum(ad::mul(y, y)).backward();
  CHECK(y.grad_or_zeros() == std::vector<double>{2, 4});

  CHECK_THROWS_AS(ad::mul(y, y).backward(), DomainError);
}

TEST_CASE("gradients accumulate over repeated uses and skip unreachable tensors") {
  auto x = Tensor::from({2}, {0.5, -1.5}, true);
  auto unused = Tensor::from({2}, {1, 1}, true);
  ad::sum(ad::add(x, x)).backward();
  CHECK(x.grad_or_zeros() == std::vector<double>{2, 2});
  CHECK(unused.grad().empty());
  CHECK(unused.grad_or_zeros() == std::vector<double>{0, 0});
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor::from({2}, {1, 2}, true);
  ad::NoGradGuard guard;
  const auto y = ad::sum(ad::square(x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite-difference checks of every op on random small shapes") {
  Rng rng(42);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  auto row = random_tensor({3}, rng);
  auto pos = random_tensor({2, 3}, rng, 0.5, 2.0);
  auto m = random_tensor({3, 4}, rng);
  auto mt = random_tensor({4, 3}, rng);

  auto expect_ok = [](const char* name, std::function<Tensor()> f, std::vector<Tensor> ps) {
    const auto r = check_gradients(f, ps);
    INFO(name << " rel error " << r.rel_error);
    CHECK(r.rel_error < 1e-4);
    CHECK(r.max_abs_numeric > 0);
  };

  expect_ok("add/sub/mul", [&] { return ad::sum(ad::mul(ad::sub(ad::add(a, b), row), a)); },
            {a, b, row});
  expect_ok("div", [&] { return ad::sum(ad::div(a, pos)); }, {a, pos});
  expect_ok("exp/log", [&] { return ad::mean(ad::mul(ad::exp(a), ad::log(pos))); }, {a, pos});
  expect_ok("sin/cos", [&] { return ad::sum(ad::mul(ad::sin(a), ad::cos(b))); }, {a, b});
  expect_ok("abs/relu/sqrt",
            [&] { return ad::sum(ad::add(ad::mul(ad::abs(a), ad::relu(b)), ad::sqrt(pos))); },
            {a, b, pos});
  expect_ok("var", [&] { return ad::var(ad::mul(a, b)); }, {a, b});
  expect_ok("matmul", [&] { return ad::sum(ad::square(ad::matmul(a, m))); }, {a, m});
  expect_ok("matmul_nt", [&] { return ad::sum(ad::square(ad::matmul_nt(a, mt))); }, {a, mt});
  expect_ok("softmax", [&] { return ad::sum(ad::mul(ad::softmax(a), b)); }, {a, b});
  expect_ok("log_softmax", [&] { return ad::sum(ad::mul(ad::log_softmax(a), b)); }, {a, b});
  const std::vector<int> tgt{2, 0};
  expect_ok("cross_entropy",
            [&] { return ad::cross_entropy_with_logits(ad::mul(a, b), tgt); }, {a, b});
  auto gain = random_tensor({3}, rng);
  auto bias = random_tensor({3}, rng);
  expect_ok("layer_norm",
            [&] { return ad::sum(ad::mul(ad::layer_norm(a, gain, bias), b)); }, {a, gain, bias});
  expect_ok("l2_normalize", [&] { return ad::sum(ad::mul(ad::l2_normalize_rows(a), b)); },
            {a, b});
  auto table = random_tensor({5, 3}, rng);
  const std::vector<int> idx{4, 0, 4};
  const std::vector<double> w{0.25, 0.75, 1.0};
  expect_ok("embedding_lookup",
            [&] { return ad::sum(ad::square(ad::embedding_lookup(table, idx))); }, {table});
  expect_ok("weighted_gather",
            [&] { return ad::sum(ad::square(ad::weighted_gather(table, idx, w, 1))); }, {table});
  expect_ok("concat/slice", [&] {
    auto c = ad::concat({a, b}, 0);
    auto d = ad::concat({a, b}, -1);
    return ad::add(ad::sum(ad::square(ad::slice(c, 0, 1, 3))),
                   ad::sum(ad::square(ad::slice(d, 1, 2, 5))));
  }, {a, b});
  expect_ok("reshape/permute/transpose", [&] {
    auto t = ad::transpose(ad::reshape(a, {3, 2}));
    return ad::sum(ad::mul(t, ad::permute(b, {0, 1})));
  }, {a, b});
  expect_ok("sum_last", [&] { return ad::sum(ad::square(ad::sum_last(a))); }, {a});
}

TEST_CASE("finite-difference checks of convolution variants") {
  Rng rng(7);
  auto x = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  for (bool circular : {false, true}) {
    for (int stride : {1, 2}) {
      ad::Conv2dOptions opt{stride, 1, circular};
      const auto r = check_gradients(
          [&] { return ad::sum(ad::square(ad::conv2d(x, w, b, opt))); }, {x, w, b});
      INFO("circular " << circular << " stride " << stride);
      CHECK(r.rel_error < 1e-4);
    }
  }
  const auto r = check_gradients(
      [&] { return ad::sum(ad::square(ad::upsample_nearest2x(x))); }, {x});
  CHECK(r.rel_error < 1e-4);
}

TEST_CASE("composites of up to four ops match finite differences") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({2, 3}, rng);
    auto y = random_tensor({2, 3}, rng);
    auto z = random_tensor({3, 3}, rng);
    const auto r = check_gradients(
        [&] { return ad::mean(ad::sin(ad::mul(ad::matmul(x, z), y))); }, {x, y, z});
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("circular convolution wraps only horizontally") {
  // A single bright pixel on the right edge leaks into column 0 only with
  // circular padding, and never into the row above the top edge.
  auto x = Tensor::zeros({1, 1, 3, 4});
  x.data()[1 * 4 + 3] = 1;
  const auto w = Tensor::full({1, 1, 3, 3}, 1);
  const auto zero_pad = ad::conv2d(x, w, Tensor(), {1, 1, false});
  const auto wrap = ad::conv2d(x, w, Tensor(), {1, 1, true});
  CHECK(zero_pad.at(1 * 4 + 0) == 0);
  CHECK(wrap.at(1 * 4 + 0) == 1);
  CHECK(wrap.at(0 * 4 + 0) == 1);
  const auto row_sum = wrap.at(0) + wrap.at(1) + wrap.at(2) + wrap.at(3);
  CHECK(row_sum == 3);
}

TEST_CASE("straight-through routes the whole gradient to the carrier") {
  auto zq = Tensor::from({3}, {1, 2, 3}, true);
  auto zhat = Tensor::from({3}, {0.5, 2.5, 2.0}, true);
  auto st = ad::straight_through(zq, zhat);
  CHECK(st.at(0) == 1);
  ad::sum(st).backward();
  CHECK(zhat.grad_or_zeros() == std::vector<double>{1, 1, 1});
  CHECK(zq.grad().empty());
  CHECK_THROWS_AS(ad::straight_through(zq, Tensor::zeros({2})), ShapeError);

  // Downstream parameters see identical gradients when z_q == z_hat.
  Rng rng(3);
  auto dec = random_tensor({3, 2}, rng);
  auto z = random_tensor({1, 3}, rng);
  ad::sum(ad::square(ad::matmul(z, dec))).backward();
  const auto direct = dec.grad_or_zeros();
  dec.zero_grad();
  ad::sum(ad::square(ad::matmul(ad::straight_through(ad::detach(z), z), dec))).backward();
  CHECK(dec.grad_or_zeros() == direct);

  // The forward value ignores the carrier, so finite differences do not
  // apply; check the surrogate gradient of a shifted copy instead.
  const auto q = ad::detach(ad::add_scalar(z, 0.25));
  dec.zero_grad();
  z.zero_grad();
  ad::sum(ad::matmul(ad::straight_through(q, z), dec)).backward();
  const auto gz = z.grad_or_zeros();
  for (int k = 0; k < 3; ++k) CHECK(gz[k] == doctest::Approx(dec.at(k * 2) + dec.at(k * 2 + 1)));
}

TEST_CASE("adam") {
  ad::AdamConfig cfg;
  cfg.lr = 0.01;
  std::vector<double> p{1.0, -2.0};
  ad::AdamMoments m;
  ad::adam_step(p, std::vector<double>{0.0, 0.0}, m, 1, cfg);
  CHECK(p == std::vector<double>{1.0, -2.0});

  // Bias-corrected first step moves each coordinate by lr * g / (|g| + eps).
  ad::AdamMoments m2;
  std::vector<double> q{0.0, 0.0};
  ad::adam_step(q, std::vector<double>{3.0, -0.5}, m2, 1, cfg);
  CHECK(q[0] == doctest::Approx(-0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));

  auto run = [] {
    Rng rng(5);
    auto w = random_tensor({4}, rng);
    ad::Adam opt({w}, {});
    for (int k = 0; k < 20; ++k) {
      opt.zero_grad();
      ad::sum(ad::square(ad::add_scalar(w, 0.3))).backward();
      opt.step();
    }
    return std::vector<double>(w.data().begin(), w.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoints roundtrip bit-exactly and report errors") {
  Rng rng(1);
  ad::ParamStore ps;
  nn::Linear lin(ps, "lin", 3, 2, rng);
  const auto path = std::filesystem::temp_directory_path() / "t2l_ckpt_test.ckpt";
  ps.save(path);
  ad::ParamStore other;
  Rng rng2(2);
  nn::Linear lin2(other, "lin", 3, 2, rng2);
  other.load(path);
  for (std::size_t k = 0; k < lin.weight.numel(); ++k) {
    CHECK(static_cast<float>(lin2.weight.at(k)) == static_cast<float>(lin.weight.at(k)));
  }
  const auto bytes = ad::encode_checkpoint(ps.to_arrays());
  CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "T2LCKPT");
  CHECK(bytes[7] == 1);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(ad::decode_checkpoint(cut), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(ad::decode_checkpoint(bad), ParseError);

  ad::ParamStore wrong;
  nn::Linear lin3(wrong, "lin", 4, 2, rng2);
  CHECK_THROWS_AS(wrong.load(path), ShapeError);
  std::filesystem::remove(path);
}

TEST_CASE("causal attention") {
  Rng rng(31);
  auto q = random_tensor({2, 5, 6}, rng);
  auto k = random_tensor({2, 5, 6}, rng);
  auto v = random_tensor({2, 5, 6}, rng);

  SUBCASE("matches a primitive-op oracle") {
    const auto out = ad::causal_attention(q, k, v, 2);
    for (int b = 0; b < 2; ++b) {
      for (int h = 0; h < 2; ++h) {
        auto head = [&](const Tensor& x) {
          return ad::slice(ad::reshape(ad::slice(x, 0, b, b + 1), {5, 6}), 1, 3 * h, 3 * h + 3);
        };
        std::vector<Real> mask(25, 0);
        for (int i = 0; i < 5; ++i) {
          for (int j = i + 1; j < 5; ++j) mask[i * 5 + j] = -1e30;
        }
        const auto s = ad::add(ad::scale(ad::matmul_nt(head(q), head(k)), 1 / std::sqrt(3.0)),
                               Tensor::from({5, 5}, mask));
        const auto o = ad::matmul(ad::softmax(s), head(v));
        for (int i = 0; i < 5; ++i) {
          for (int c = 0; c < 3; ++c) {
            CHECK(out.at((b * 5 + i) * 6 + 3 * h + c) == doctest::Approx(o.at(i * 3 + c)).epsilon(1e-12));
          }
        }
      }
    }
  }
  SUBCASE("gradients") {
    const auto r = check_gradients(
        [&] { return ad::sum(ad::square(ad::causal_attention(q, k, v, 3))); }, {q, k, v});
    CHECK(r.rel_error < 1e-7);
  }
  SUBCASE("later positions never influence earlier outputs") {
    const auto base = ad::causal_attention(q, k, v, 2);
    for (int pos = 0; pos < 5; ++pos) {
      auto k2 = Tensor::from(k.shape(), std::vector<Real>(k.data().begin(), k.data().end()));
      auto v2 = Tensor::from(v.shape(), std::vector<Real>(v.data().begin(), v.data().end()));
      for (int c = 0; c < 6; ++c) {
        k2.data()[pos * 6 + c] += 3;
        v2.data()[pos * 6 + c] -= 2;
      }
      const auto out = ad::causal_attention(q, k2, v2, 2);
      for (int i = 0; i < pos; ++i) {
        for (int c = 0; c < 6; ++c) CHECK(out.at(i * 6 + c) == base.at(i * 6 + c));
      }
    }
  }
  CHECK_THROWS_AS(ad::causal_attention(q, k, v, 4), DomainError);
}
