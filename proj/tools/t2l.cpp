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

// t2l: stage-wise pipeline driver. Exit codes: 0 ok, 2 configuration or
// usage error, 3 missing prerequisite stage, 4 data error.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "t2l/pipeline.hpp"
#include "t2l/raster.hpp"

namespace pl = t2l::pipeline;

namespace {

enum Exit { kOk = 0, kConfig = 2, kMissing = 3, kData = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value

  pl::PipelineConfig load() const {
    auto cfg = pl::load_config(config_path.empty() ? std::nullopt
                                                   : std::optional<std::filesystem::path>(config_path));
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw pl::ConfigError("--set expects section.key=value, got '" + kv + "'");
      pl::set_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-driven HDR panorama pipeline (desk scale)"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", common.overrides, "Override one key, e.g. --set local_sampler.steps=100");

  auto* show = app.add_subcommand("show-config", "Print the effective configuration and its hash");
  auto* prep = app.add_subcommand("prepare-data", "Synthesize the procedural corpus");
  auto* codebooks = app.add_subcommand("train-codebooks", "Train the global and local tokenizers");
  auto* tglobal = app.add_subcommand("train-global", "Train the text-conditioned global sampler");
  auto* tlocal = app.add_subcommand("train-local", "Train the structure-aware local sampler");
  auto* tsr = app.add_subcommand("train-sritmo", "Train the SR-iTMO stage");

  std::string text, out, input, source, region;
  std::uint64_t seed = 0;
  double factor = 2.0;
  auto* gen = app.add_subcommand("generate", "Synthesize an LDR panorama from text");
  gen->add_option("--text", text, "Prompt")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "Sampling seed (default: run.seed)");
  gen->add_option("-o,--out", out, "Output PNG (default: <work_dir>/out/generated-<seed>.png)");

  auto* up = app.add_subcommand("upscale", "Super-resolve an LDR panorama into HDR");
  up->add_option("-i,--input", input, "LDR PNG")->required()->check(CLI::ExistingFile);
  up->add_option("--factor", factor, "Scale factor >= 1")->capture_default_str();
  up->add_option("-o,--out", out, "Output .hdr (a .png preview at EV 0 is written alongside)");

  auto* ed = app.add_subcommand("edit", "Re-sample a column range of a generated panorama's global tokens");
  ed->add_option("--from", source, "PNG written by generate or edit")->required()->check(CLI::ExistingFile);
  ed->add_option("--text", text, "Amended prompt")->required();
  ed->add_option("--region", region, "Global token columns BEGIN:END (end exclusive)")->required();
  auto* ed_seed = ed->add_option("--seed", seed, "Sampling seed (default: run.seed)");
  ed->add_option("-o,--out", out, "Output PNG (default: <work_dir>/out/edited-<seed>.png)");

  std::string manifest;
  auto* ev = app.add_subcommand("eval-itmo", "MAE and RMSE of predicted against reference HDR images");
  ev->add_option("manifest", manifest, "Lines of '<pred.hdr> <gt.hdr>'")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", out, "Report file (default: <manifest>.scores.txt)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto cfg = common.load();
    const std::filesystem::path work = cfg.work_dir;
    const auto sample_seed = [&](CLI::Option* opt) { return opt->count() ? seed : cfg.seed; };

    if (*show) {
      std::cout << pl::format_config(cfg) << "\n# config_hash " << pl::config_hash(cfg) << "\n";
    } else if (*prep) {
      pl::prepare_data(cfg);
      std::cout << "corpus written to " << (work / "corpus").string() << "\n";
    } else if (*codebooks) {
      const auto [g, l] = pl::train_codebooks(cfg);
      std::printf("reconstruction mse: global %.3g, local %.3g\n", g, l);
    } else if (*tglobal) {
      std::printf("global sampler nll %.4f nats/token\n", pl::train_global_stage(cfg));
    } else if (*tlocal) {
      std::printf("local sampler nll %.4f nats/token\n", pl::train_local_stage(cfg));
    } else if (*tsr) {
      std::printf("sr-itmo joint loss %.4f\n", pl::train_sritmo_stage(cfg));
    } else if (*gen) {
      const auto s = sample_seed(gen_seed);
      const std::filesystem::path path =
          out.empty() ? work / "out" / ("generated-" + std::to_string(s) + ".png") : std::filesystem::path(out);
      pl::generate(cfg, text, s, path);
      std::cout << path.string() << "\n";
    } else if (*ed) {
      const auto colon = region.find(':');
      if (colon == std::string::npos) throw pl::ConfigError("--region expects BEGIN:END");
      int b = 0, e = 0;
      try {
        b = std::stoi(region.substr(0, colon));
        e = std::stoi(region.substr(colon + 1));
      } catch (const std::exception&) {
        throw pl::ConfigError("--region expects integers BEGIN:END, got '" + region + "'");
      }
      const auto s = sample_seed(ed_seed);
      const std::filesystem::path path =
          out.empty() ? work / "out" / ("edited-" + std::to_string(s) + ".png") : std::filesystem::path(out);
      pl::edit(cfg, source, text, b, e, s, path);
      std::cout << path.string() << "\n";
    } else if (*up) {
      std::filesystem::path path = out;
      if (path.empty()) {
        path = std::filesystem::path(input);
        path.replace_extension(".hdr");
      }
      const auto hdr = pl::upscale_image(cfg, input, factor, path);
      float peak = 0;
      for (float v : hdr.values()) peak = std::max(peak, v);
      std::printf("%s (%dx%d, peak %.3g)\n", path.string().c_str(), hdr.height(), hdr.width(), peak);
    } else if (*ev) {
      const auto scores = pl::eval_itmo(manifest);
      const std::filesystem::path path = out.empty() ? manifest + ".scores.txt" : out;
      char buf[128];
      std::snprintf(buf, sizeof buf, "MAE %.6g\nRMSE %.6g\n", scores.mae, scores.rmse);
      std::cout << buf;
      const std::string report = buf;
      t2l::write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(report.data()), report.size()});
      pl::write_sidecar(path, {{"command", "eval-itmo"},
                               {"config_hash", pl::config_hash(cfg)},
                               {"manifest", manifest},
                               {"images", std::to_string(scores.images)}});
    }
    return kOk;
  } catch (const pl::ConfigError& e) {
    std::cerr << "t2l: configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const pl::MissingDependency& e) {
    std::cerr << "t2l: missing dependency: " << e.what() << "\n";
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "t2l: data error: " << e.what() << "\n";
    return kData;
  }
}
