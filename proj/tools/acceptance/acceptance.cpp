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

// Acceptance runner: one PASS/FAIL line per criterion. Tolerances and
// budgets are pinned below; nothing here is tuned per run.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include "gradients.hpp"
#include "t2l/datapipe.hpp"
#include "t2l/embedding.hpp"
#include "t2l/pipeline.hpp"
#include "t2l/raster.hpp"
#include "t2l/samplers.hpp"
#include "t2l/sphere.hpp"
#include "t2l/sritmo.hpp"
#include "t2l/vq.hpp"

namespace fs = std::filesystem;
using namespace t2l;

namespace {

// --- pinned tolerances ----------------------------------------------------------
constexpr double kSphereTol = 1e-9;       // rad
constexpr double kSphereBudget = 1.0;     // s
constexpr double kRgbeRel = 1.0 / 256;    // per component, relative to the pixel max
constexpr double kCalibRel = 1e-6;
constexpr double kGradRel = 1e-4;
constexpr double kScaleTol = 1e-10;
constexpr double kWeightSumTol = 1e-9;
constexpr double kBilinearTol = 1e-7;
constexpr double kTokenizerMse = 1e-3;
constexpr double kTeacherAcc = 0.99;
constexpr double kLocalNll = 0.01;        // nats/token
constexpr double kSrPsnr = 30.0;          // dB, x2 held out
constexpr double kSrLogRmse = 0.15;       // x2 held out
constexpr int kSrPairs = 200;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1. spherical roundtrip ---------------------------------------------------------

Outcome spherical_roundtrip() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  double worst = 0;
  for (int k = 0; k < 100000; ++k) {
    const long h = 16 + static_cast<long>(uniform_index(rng, 1024));
    const long w = 2 * h;
    const long i = static_cast<long>(uniform_index(rng, static_cast<std::uint64_t>(h)));
    const long j = static_cast<long>(uniform_index(rng, static_cast<std::uint64_t>(w)));
    const auto c = sphere::pixel_to_sphere(i, j, h, w);
    const auto p = sphere::sphere_to_pixel(c, h, w);
    const auto back = sphere::fractional_pixel_to_sphere(p.row, p.col, h, w);
    worst = std::max({worst, std::abs(sphere::wrap_theta(back.theta - c.theta)), std::abs(back.phi - c.phi)});
    // Pixel indices must come back as well; columns compare modulo W.
    if (std::lround(p.row) != i || std::lround(p.col) % w != j) worst = std::max(worst, 1.0);
  }
  const int channels = sphere::spe_channels(4);
  const auto spe = sphere::spe_vector({0.3, -0.2}, 4);
  const double t = seconds_since(t0);
  return {worst <= kSphereTol && channels == 18 && spe.size() == 18u && t < kSphereBudget,
          fmt("max angular error %.2e rad over 1e5 pixels, SPE channels %d (L=4), %.3f s", worst, channels, t)};
}

// --- 2. RGBE ----------------------------------------------------------------------

Outcome rgbe_codec(const fs::path& data_dir) {
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    HdrImage img(7 + trial, 13 + 2 * trial);
    const double range = std::pow(10.0, uniform(rng, -3, 4));
    for (auto& v : img.values()) v = static_cast<float>(range * std::pow(uniform01(rng), 3));
    const auto back = decode_rgbe(encode_rgbe(img));
    for (int r = 0; r < img.height(); ++r) {
      for (int c = 0; c < img.width(); ++c) {
        const double m = std::max({img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2)});
        if (m < 1e-32) continue;
        for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(back.at(r, c, k) - img.at(r, c, k)) / m);
      }
    }
  }
  // Golden file: every value must match the recorded decode exactly.
  std::size_t mismatches = 0, count = 0;
  bool golden_ok = false;
  try {
    const auto img = read_hdr(data_dir / "golden_rle.hdr");
    std::ifstream f(data_dir / "golden_rle.expected.txt");
    int h = 0, w = 0;
    f >> h >> w;
    std::string tok;
    while (f >> tok) {
      if (count < img.size()) mismatches += img.values()[count] != static_cast<float>(std::strtod(tok.c_str(), nullptr));
      ++count;
    }
    golden_ok = h == img.height() && w == img.width() && count == img.size() && mismatches == 0;
  } catch (const std::exception& e) {
    return {false, std::string("golden fixture: ") + e.what()};
  }
  return {worst <= kRgbeRel && golden_ok,
          fmt("max relative error %.5f (limit %.5f); golden fixture %zu values, %zu mismatches", worst, kRgbeRel,
              count, mismatches)};
}

// --- 3. calibration ---------------------------------------------------------------

Outcome calibration() {
  Rng rng(3);
  double worst = 0, worst_idem = 0;
  int trials = 0;
  for (int t = 0; t < 200; ++t) {
    HdrImage hdr(5 + t % 7, 9 + t % 5);
    const double peak = uniform(rng, 0.1, 100);
    for (auto& v : hdr.values()) v = static_cast<float>(peak * std::pow(uniform01(rng), 2));
    const auto ldr = reinhard_tonemap(hdr);
    const auto mask = calib_mask(ldr);
    if (mask.count() == 0) continue;
    ++trials;
    const auto out = calibrate(hdr, ldr, mask);
    double sl = 0, so = 0;
    for (int r = 0; r < hdr.height(); ++r) {
      for (int c = 0; c < hdr.width(); ++c) {
        if (!mask.at(r, c)) continue;
        for (int k = 0; k < 3; ++k) {
          sl += ldr.at(r, c, k);
          so += out.at(r, c, k);
        }
      }
    }
    worst = std::max(worst, std::abs(so - sl) / sl);
    const auto twice = calibrate(out, ldr, mask);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double d = std::abs(twice.values()[k] - out.values()[k]) / std::max(1e-12f, std::abs(out.values()[k]));
      worst_idem = std::max(worst_idem, d);
    }
  }
  // Mask rule: channel sum strictly below 3 sigma = 2.49.
  LdrImage probe(1, 2);
  for (int k = 0; k < 3; ++k) {
    probe.at(0, 0, k) = 0.5f;  // sum 1.5
    probe.at(0, 1, k) = 1.0f;  // sum 3
  }
  const auto m = calib_mask(probe, 0.83);
  const bool rule = m.at(0, 0) && !m.at(0, 1);
  return {worst <= kCalibRel && worst_idem <= kCalibRel && rule && trials > 100,
          fmt("masked-sum relative error %.2e over %d pairs; idempotence %.2e; mask rule %s", worst, trials,
              worst_idem, rule ? "ok" : "wrong")};
}

// --- 4. gradients -----------------------------------------------------------------

Outcome gradients() {
  const auto results = acceptance::gradient_integrity();
  bool ok = !results.empty();
  std::string detail;
  for (const auto& r : results) {
    ok = ok && r.rel_error < kGradRel;
    detail += (detail.empty() ? "" : "; ") + r.path + fmt(" %.1e", r.rel_error);
  }
  return {ok, detail};
}

// --- 5. quantization ----------------------------------------------------------------

Outcome quantization() {
  Rng rng(5);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int dim = 1 + static_cast<int>(uniform_index(rng, 8));
    const int k = 2 + static_cast<int>(uniform_index(rng, 30));
    const int n = 1 + static_cast<int>(uniform_index(rng, 4));
    std::vector<Real> table(static_cast<std::size_t>(k) * dim), q(static_cast<std::size_t>(n) * dim);
    for (auto& v : table) v = static_cast<Real>(standard_normal(rng));
    for (auto& v : q) v = static_cast<Real>(standard_normal(rng));
    const auto got = vq::quantize(ad::Tensor::from({n, dim}, q), ad::Tensor::from({k, dim}, table));
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = INFINITY;
      for (int e = 0; e < k; ++e) {
        double d = 0;
        for (int c = 0; c < dim; ++c) {
          const double x = static_cast<double>(q[i * dim + c]) - table[e * dim + c];
          d += x * x;
        }
        if (d < best_d) {
          best_d = d;
          best = e;
        }
      }
      // Float distances can legitimately disagree on near ties; count a
      // mismatch only when the returned entry is measurably farther.
      if (got.indices[i] != best) {
        double d = 0;
        for (int c = 0; c < dim; ++c) {
          const double x = static_cast<double>(q[i * dim + c]) - table[got.indices[i] * dim + c];
          d += x * x;
        }
        mismatches += d - best_d > 1e-5 * std::max(1.0, best_d);
      }
    }
  }
  // Straight-through: downstream gradient through sg-carrier equals the
  // gradient of the same function applied to z_hat directly.
  Rng r2(55);
  std::vector<Real> zv(12), wv(12);
  for (auto& v : zv) v = static_cast<Real>(uniform(r2, -1, 1));
  for (auto& v : wv) v = static_cast<Real>(uniform(r2, -1, 1));
  auto z = ad::Tensor::from({3, 4}, zv, true);
  auto w = ad::Tensor::from({4, 3}, wv, true);
  const auto table = ad::Tensor::from({3, 4}, std::vector<Real>(zv.begin(), zv.end()));
  const auto qz = vq::quantize(z, table);  // table rows equal z, so z_q = z_hat
  ad::sum(ad::square(ad::matmul(ad::straight_through(qz.zq, z), w))).backward();
  const auto st = z.grad_or_zeros();
  z.zero_grad();
  ad::sum(ad::square(ad::matmul(z, w))).backward();
  const auto direct = z.grad_or_zeros();
  double gdiff = 0;
  for (std::size_t k = 0; k < st.size(); ++k) gdiff = std::max(gdiff, static_cast<double>(std::abs(st[k] - direct[k])));
  return {mismatches == 0 && gdiff == 0,
          fmt("%d mismatches against brute force on 1e4 instances; straight-through vs identity max diff %.1e",
              mismatches, gdiff)};
}

// --- 6. scale invariance --------------------------------------------------------------

Outcome scale_invariance() {
  const std::vector<double> kappas = {1e-3, 1.0, 1e3};
  const auto r = acceptance::itmo_scale_invariance(kappas, 1000);
  return {r.max_diff <= kScaleTol && r.min_loss >= 0,
          fmt("max |L(kappa pred) - L(pred)| %.2e for kappa in {1e-3,1,1e3} (64-bit, 1000 draws); min loss %.3g",
              r.max_diff, r.min_loss)};
}

// --- 7. interpolation ----------------------------------------------------------------

Outcome interpolation() {
  Rng rng(7);
  double sum_err = 0, oracle_err = 0, min_w = 0, anchor_err = 0;
  for (int t = 0; t < 10000; ++t) {
    const int rows = 2 + static_cast<int>(uniform_index(rng, 30));
    const int cols = 2 + static_cast<int>(uniform_index(rng, 30));
    const double u = uniform(rng, 0, cols - 1), v = uniform(rng, 0, rows - 1);
    // Random latent field; interpolate through the weights and compare with
    // a direct bilinear evaluation.
    const auto s = sritmo::area_weights(u, v, rows, cols);
    double sum = 0, via_weights = 0;
    auto field = [&](int i, int j) { return std::sin(0.7 * i + 1.3 * j) + 0.1 * i * j; };
    for (int k = 0; k < 4; ++k) {
      min_w = std::min(min_w, s.weight[k]);
      sum += s.weight[k];
      via_weights += s.weight[k] * field(s.index[k] / cols, s.index[k] % cols);
    }
    const int j0 = std::min(static_cast<int>(std::floor(u)), cols - 2);
    const int i0 = std::min(static_cast<int>(std::floor(v)), rows - 2);
    const double fu = u - j0, fv = v - i0;
    const double direct = (1 - fu) * (1 - fv) * field(i0, j0) + fu * (1 - fv) * field(i0, j0 + 1) +
                          (1 - fu) * fv * field(i0 + 1, j0) + fu * fv * field(i0 + 1, j0 + 1);
    sum_err = std::max(sum_err, std::abs(sum - 1));
    oracle_err = std::max(oracle_err, std::abs(via_weights - direct));
    const int ai = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(rows)));
    const int aj = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cols)));
    const auto a = sritmo::area_weights(aj, ai, rows, cols);
    double at = 0;
    for (int k = 0; k < 4; ++k) at += a.weight[k] * field(a.index[k] / cols, a.index[k] % cols);
    anchor_err = std::max(anchor_err, std::abs(at - field(ai, aj)));
  }
  return {min_w >= 0 && sum_err <= kWeightSumTol && anchor_err == 0 && oracle_err <= kBilinearTol,
          fmt("min weight %.1e, |sum-1| %.1e, anchor error %.1e, bilinear oracle %.1e (1e4 queries)", min_w, sum_err,
              anchor_err, oracle_err)};
}

// --- shared desk fixtures for the training criteria -------------------------------------

struct Toy {
  std::vector<LdrImage> panos;    // 128x256, one per class
  std::vector<LdrImage> globals;  // 32x64
  std::optional<vq::Tokenizer> global_tok, local_tok;
  double global_mse = 0, local_mse = 0;
  std::vector<samplers::LocalExample> local_examples;
};

pipeline::PipelineConfig desk() { return pipeline::PipelineConfig(); }

Toy& toy() {
  static Toy t;
  if (!t.panos.empty()) return t;
  const auto cfg = desk();
  Rng rng(9);
  for (auto c : {data::SceneClass::kSkyGradient, data::SceneClass::kSunDisk, data::SceneClass::kInteriorLamp,
                 data::SceneClass::kCheckerGround}) {
    const auto hdr = data::synth_pano(data::random_scene(c, rng), cfg.corpus.height, cfg.corpus.width);
    t.panos.push_back(reinhard_tonemap(hdr));
    const auto& m = cfg.global_tokenizer.model;
    t.globals.push_back(resample_area(t.panos.back(), m.height, m.width));
  }
  return t;
}

void train_toy_tokenizers() {
  auto& t = toy();
  if (t.global_tok) return;
  const auto cfg = desk();
  t.global_tok.emplace(cfg.global_tokenizer.model, 11);
  auto gt = cfg.global_tokenizer.train;
  gt.steps = 600;
  vq::train_tokenizer(*t.global_tok, t.globals, gt);
  t.global_mse = vq::reconstruction_mse(*t.global_tok, t.globals);

  const auto& lm = cfg.local_tokenizer.model;
  std::vector<LdrImage> crops;
  const int f = lm.factor();
  for (const auto& p : t.panos) {
    for (int r : samplers::window_origins(p.height() / f, lm.token_rows(), cfg.stride, false)) {
      for (int c : samplers::window_origins(p.width() / f, lm.token_cols(), cfg.stride, true)) {
        crops.push_back(crop_wrap(p, r * f, c * f, lm.height, lm.width));
      }
    }
  }
  t.local_tok.emplace(lm, 12);
  auto lt = cfg.local_tokenizer.train;
  lt.steps = 1500;
  vq::train_tokenizer(*t.local_tok, crops, lt);
  t.local_mse = vq::reconstruction_mse(*t.local_tok, crops);
  for (std::size_t i = 0; i < t.panos.size(); ++i) {
    const auto g = t.global_tok->encode(t.globals[i]);
    auto ex = samplers::local_examples(t.panos[i], g, *t.local_tok, cfg.stride, cfg.local.octaves);
    t.local_examples.insert(t.local_examples.end(), ex.begin(), ex.end());
  }
}

// --- 8. circular equivariance ------------------------------------------------------------

Outcome circular_equivariance() {
  train_toy_tokenizers();
  auto& t = toy();
  const auto& tok = *t.global_tok;
  const int f = tok.config().factor();
  int shifted = 0, mismatched = 0;
  for (const auto& img : t.globals) {
    const auto g = tok.encode(img);
    for (int k = 1; k < g.cols; ++k) {
      const auto gs = tok.encode(rotate_horizontal(img, f * k));
      for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) mismatched += gs.at(r, (c + k) % g.cols) != g.at(r, c);
      }
      ++shifted;
    }
  }
  return {mismatched == 0 && tok.config().circular,
          fmt("%d rotations by whole token strides (%d px), %d token mismatches", shifted, f, mismatched)};
}

// --- 9. overfit convergence -------------------------------------------------------------

struct LocalRun {
  double loss = 0;
  std::optional<samplers::LocalSampler> sampler;
};

LocalRun train_toy_local(bool no_spe) {
  auto& t = toy();
  auto cfg = desk();
  cfg.local.no_spe = no_spe;
  const auto& g = cfg.global_tokenizer.model;
  const auto& l = cfg.local_tokenizer.model;
  LocalRun run;
  run.sampler.emplace(cfg.local, l.codebook_size, g.codebook_size, l.token_rows(), l.token_cols(), g.token_rows(),
                      g.token_cols(), 21);
  samplers::TrainSchedule sched;
  sched.steps = 500;
  sched.batch = 8;
  sched.lr = 2e-3;
  sched.seed = 22;
  samplers::train_local(*run.sampler, t.local_examples, sched);
  ad::NoGradGuard guard;
  run.loss = run.sampler->loss(t.local_examples).item();
  return run;
}

LocalRun& baseline_local() {
  static LocalRun run = train_toy_local(false);
  return run;
}

Outcome overfit_convergence() {
  train_toy_tokenizers();
  auto& t = toy();
  const auto cfg = desk();

  // Global sampler on the four grids; rotations fill the retrieval store.
  std::vector<samplers::GlobalExample> data;
  embedding::EmbeddingStore store(embedding::kToyDim);
  for (std::size_t i = 0; i < t.panos.size(); ++i) {
    data.push_back({t.global_tok->encode(t.globals[i]), embedding::toy_image_embed(t.globals[i])});
    store.add("toy" + std::to_string(i), data.back().image_embedding);
    for (const auto& r : data::rotation_shifts(t.globals[i].width(), 4)) {
      store.add("toy" + std::to_string(i) + "@" + std::to_string(r.shift),
                embedding::toy_image_embed(rotate_horizontal(t.globals[i], r.shift)));
    }
  }
  const auto& gm = cfg.global_tokenizer.model;
  samplers::GlobalSampler gs(cfg.global, gm.codebook_size, gm.token_rows(), gm.token_cols(), store.dim(), 31);
  samplers::TrainSchedule sched;
  sched.steps = 300;
  sched.seed = 32;
  samplers::train_global(gs, data, store, sched);
  std::vector<embedding::ConditionBundle> conds;
  for (const auto& ex : data) conds.push_back(gs.condition(ex.image_embedding, store));
  const double acc = gs.teacher_forced_accuracy(data, conds);

  auto& local = baseline_local();
  const auto pano = samplers::generate_panorama(data[1].tokens, *local.sampler, *t.local_tok, cfg.corpus.height,
                                                cfg.corpus.width, cfg.stride, {1.0, 100, 5});
  const auto again = t.local_tok->decode_grid(pano.grid);
  const bool identical = pano.image.height() == cfg.corpus.height && pano.image.width() == cfg.corpus.width &&
                         std::ranges::equal(pano.image.values(), again.values()) &&
                         std::ranges::none_of(pano.grid.indices, [](int v) { return v < 0; });

  const bool ok = t.global_mse < kTokenizerMse && t.local_mse < kTokenizerMse && acc > kTeacherAcc &&
                  local.loss < kLocalNll && identical;
  return {ok, fmt("tokenizer MSE global %.2e local %.2e; global teacher-forced accuracy %.4f; local NLL %.4f "
                  "nats/token; panorama %dx%d %s its token grid",
                  t.global_mse, t.local_mse, acc, local.loss, pano.image.height(), pano.image.width(),
                  identical ? "decodes identically from" : "DIFFERS from")};
}

// --- 10. SR-iTMO ----------------------------------------------------------------------

Outcome sritmo_desk() {
  data::CorpusConfig cc;
  cc.scenes_per_class = 5;
  const auto scenes = data::make_scenes(cc);
  data::PairConfig pc;
  pc.base = 16;
  std::vector<data::ScenePair> train, test2, test8;
  Rng rng(5);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto pano = data::prepare_pano(data::synth_pano(scenes[i].spec, cc.height, cc.width), pc);
    if (i % 5 == 4) {
      auto a = data::build_pairs(pano, 3, rng, pc, scenes[i].id, 2.0);
      auto b = data::build_pairs(pano, 2, rng, pc, scenes[i].id, 8.0);
      test2.insert(test2.end(), a.begin(), a.end());
      test8.insert(test8.end(), b.begin(), b.end());
    } else {
      auto a = data::build_pairs(pano, 13, rng, pc, scenes[i].id);
      train.insert(train.end(), a.begin(), a.end());
    }
  }
  train.resize(kSrPairs);

  sritmo::SrTrainConfig tc;
  tc.steps = 600;
  tc.batch = 8;
  tc.lr = 1e-3;
  auto fit = [&](bool single) {
    sritmo::SrItmoConfig c;
    c.single_mlp = single;
    sritmo::SrItmoModel m(c, 1);
    sritmo::train_sritmo(m, train, tc);
    return m;
  };
  auto joint = [&](const sritmo::SrItmoModel& m) {
    ad::NoGradGuard guard;
    double s = 0;
    for (std::size_t k = 0; k < train.size(); k += 20) {
      s += sritmo::pair_loss(m, std::span(train).subspan(k, std::min<std::size_t>(20, train.size() - k))).total.item() *
           static_cast<double>(std::min<std::size_t>(20, train.size() - k));
    }
    return s / static_cast<double>(train.size());
  };

  const auto two = fit(false);
  const auto pm = [&](const data::ScenePair& p) { return sritmo::predict_pair(two, p); };
  const auto e2 = sritmo::evaluate(test2, pm);
  const auto e8 = sritmo::evaluate(test8, pm);
  const auto b8 = sritmo::evaluate(test8, sritmo::bilinear_baseline);
  const double joint_two = joint(two);
  const auto one = fit(true);
  const double joint_one = joint(one);

  const bool x2 = e2.psnr > kSrPsnr && e2.log_rmse < kSrLogRmse;
  const bool x8 = e8.finite && e8.psnr > b8.psnr && e8.log_rmse < b8.log_rmse;
  const bool ablation = joint_one > joint_two;
  return {x2 && x8 && ablation,
          fmt("%zu pairs; x2 PSNR %.2f dB, log-RMSE %.3f; x8 PSNR %.2f vs bilinear %.2f, log-RMSE %.3f vs %.3f, "
              "finite %s; joint loss two-MLP %.4f vs single-MLP %.4f",
              train.size(), e2.psnr, e2.log_rmse, e8.psnr, b8.psnr, e8.log_rmse, b8.log_rmse,
              e8.finite ? "yes" : "no", joint_two, joint_one)};
}

// --- 11. ablation flags ---------------------------------------------------------------

Outcome ablation_flags() {
  train_toy_tokenizers();
  const double base = baseline_local().loss;
  const double blind = train_toy_local(true).loss;

  const auto cfg = desk();
  auto g = cfg.global;
  g.no_knn = true;
  auto& t = toy();
  const auto& gm = cfg.global_tokenizer.model;
  samplers::GlobalSampler solo(g, gm.codebook_size, gm.token_rows(), gm.token_cols(), embedding::kToyDim, 41);
  std::vector<samplers::GlobalExample> data;
  for (const auto& img : t.globals) data.push_back({t.global_tok->encode(img), embedding::toy_image_embed(img)});
  samplers::TrainSchedule sched;
  sched.steps = 100;
  const auto log = samplers::train_global(solo, data, embedding::EmbeddingStore(embedding::kToyDim), sched);
  const bool trains = std::ranges::all_of(log, [](const auto& s) { return std::isfinite(s.total); }) &&
                      log.back().nll < log.front().nll;
  return {blind > base && solo.condition_length() == 1 && trains,
          fmt("converged local NLL %.5f with SPE vs %.5f without Fourier SPE; no_knn condition length %d, NLL "
              "%.3f -> %.3f",
              base, blind, solo.condition_length(), log.front().nll, log.back().nll)};
}

// --- 12. end to end ----------------------------------------------------------------------

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome end_to_end(const fs::path& tool, const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  const auto ini = work / "e2e.ini";
  {
    std::ofstream f(ini);
    f << "[paths]\nwork_dir = " << (work / "run").string() << "\n"
      << "[corpus]\nscenes_per_class = 2\n"
      << "[global_tokenizer]\nsteps = 300\n"
      << "[local_tokenizer]\nsteps = 300\n"
      << "[global_sampler]\nsteps = 150\n"
      << "[local_sampler]\nsteps = 200\n"
      << "[sritmo]\nsteps = 300\n";
  }
  const std::string base = "\"" + tool.string() + "\" -c \"" + ini.string() + "\" ";
  for (const char* stage : {"prepare-data", "train-codebooks", "train-global", "train-local", "train-sritmo"}) {
    if (const int rc = run(base + stage); rc != 0) return {false, fmt("%s exited with %d", stage, rc)};
  }
  const std::string prompt = "bright sunny day with the sun high in the sky";
  const auto a = work / "a.png", b = work / "b.png";
  for (const auto& out : {a, b}) {
    if (const int rc = run(base + "generate --text \"" + prompt + "\" --seed 7 -o \"" + out.string() + "\""); rc != 0) {
      return {false, fmt("generate exited with %d", rc)};
    }
  }
  const bool identical = read_file_bytes(a) == read_file_bytes(b);

  // Upscale a sun-disk panorama of the corpus.
  fs::path sun;
  for (const auto& e : fs::directory_iterator(work / "run" / "corpus" / "ldr")) {
    if (e.path().filename().string().rfind("sun-disk", 0) == 0) sun = e.path();
  }
  if (sun.empty()) return {false, "corpus holds no sun-disk scene"};
  const auto hdr_path = work / "sun_x2.hdr";
  if (const int rc = run(base + "upscale -i \"" + sun.string() + "\" --factor 2 -o \"" + hdr_path.string() + "\"");
      rc != 0) {
    return {false, fmt("upscale exited with %d", rc)};
  }
  float peak = 0;
  bool parsed = false;
  try {
    const auto hdr = read_hdr(hdr_path);
    parsed = true;
    for (float v : hdr.values()) peak = std::max(peak, v);
  } catch (const std::exception&) {
  }
  const bool preview = fs::exists(work / "sun_x2.png") && fs::exists(pipeline::sidecar_path(a));
  return {identical && parsed && peak > 1 && preview,
          fmt("generate twice: %s; upscale of %s: %s, peak %.3g; preview and manifests %s",
              identical ? "byte-identical" : "DIFFERENT", sun.filename().string().c_str(),
              parsed ? "parsed" : "unparseable", peak, preview ? "present" : "missing")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string tool = T2L_TOOL_PATH, data_dir = T2L_TEST_DATA_DIR;
  std::string work = (fs::temp_directory_path() / "t2l_acceptance").string();
  std::vector<int> only;
  app.add_option("--tool", tool, "Path to the t2l executable")->capture_default_str();
  app.add_option("--data", data_dir, "Test fixture directory")->capture_default_str();
  app.add_option("--work", work, "Scratch directory for the end-to-end run")->capture_default_str();
  app.add_option("--only", only, "Run only these criterion numbers (1-12)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"spherical roundtrip", spherical_roundtrip},
      {"RGBE codec", [&] { return rgbe_codec(data_dir); }},
      {"calibration", calibration},
      {"gradient integrity", gradients},
      {"quantization oracle", quantization},
      {"iTMO scale invariance", scale_invariance},
      {"interpolation weights", interpolation},
      {"circular equivariance", circular_equivariance},
      {"overfit convergence", overfit_convergence},
      {"SR-iTMO desk run", sritmo_desk},
      {"ablation flags", ablation_flags},
      {"end to end", [&] { return end_to_end(tool, work); }},
  };
  const auto t0 = std::chrono::steady_clock::now();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::ranges::find(only, static_cast<int>(i + 1)) == only.end()) continue;
    const auto tc = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%2zu] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(tc));
    std::fflush(stdout);
  }
  std::printf("%d failed, total %.1f s\n", failed, seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
