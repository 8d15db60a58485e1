/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <cstdio>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "sdmae/error.hpp"
#include "sdmae/runner.hpp"

namespace fs = std::filesystem;

namespace sdmae {
namespace {

// Options shared by every command that builds a RunConfig.
struct CommonOptions {
  std::string config_path;
  std::string preset;
  std::string loss;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string name;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", config_path, "config file (key = value)");
    app.add_option("--preset", preset, "hyper-parameter preset S1..S4");
    app.add_option("--loss", loss, "loss mode: mae | decoupled_pixel | decoupled_feature_mse | sd_mae");
    app.add_option("--alpha", alpha, "visible-term weight");
    app.add_option("--beta", beta, "distillation weight");
    app.add_option("--seed", seed, "training seed");
    app.add_option("-o,--output", output, "output root (default $SDMAE_OUTPUT_ROOT or ./runs)");
    app.add_option("--name", name, "run directory name");
    app.add_option("--set", sets, "override a config key: key=value (repeatable)");
  }

  RunConfig resolve() const {
    std::vector<std::string> overrides;
    if (!preset.empty()) overrides.push_back("train.preset=" + preset);
    if (!loss.empty()) overrides.push_back("train.loss.mode=" + loss);
    if (alpha) overrides.push_back("train.loss.alpha=" + format_double(*alpha));
    if (beta) overrides.push_back("train.loss.beta=" + format_double(*beta));
    if (seed) overrides.push_back("train.seed=" + std::to_string(*seed));
    if (!output.empty()) overrides.push_back("output.dir=" + output);
    if (!name.empty()) overrides.push_back("output.run_name=" + name);
    overrides.insert(overrides.end(), sets.begin(), sets.end());
    RunConfig cfg = config_path.empty() ? default_config(overrides) : load_config(config_path, overrides);
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--alpha-grid: not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--alpha-grid needs at least one value");
  return out;
}

std::vector<Preset> parse_presets(const std::string& text) {
  std::vector<Preset> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_preset(item));
  return out;
}

fs::path grid_dir(const RunConfig& cfg, const char* fallback) {
  return output_root(cfg) / (cfg.run_name.empty() ? std::string(fallback) : cfg.run_name);
}

void print_summary(const std::vector<GridRow>& rows) {
  std::printf("%-4s %-30s %-22s %12s %12s %10s\n", "row", "label", "mode", "final_total", "distill", "probe_acc");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const GridRow& r = rows[i];
    const double total = r.epochs.empty() ? 0.0 : r.epochs.back().total;
    const std::string distill =
        r.config.train.loss.uses_distill() && !r.epochs.empty() ? format_double(r.epochs.back().distill) : "-";
    const std::string acc = r.probe ? format_double(r.probe->accuracy.mean) : "-";
    std::printf("%-4zu %-30s %-22s %12.6f %12.12s %10.10s\n", i + 1, r.label.c_str(),
                to_string(r.config.train.loss.mode).c_str(), total, distill.c_str(), acc.c_str());
  }
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"SD-MAE pretraining and evaluation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "logging threshold")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  CommonOptions pre_opts, eval_opts, ladder_opts, synth_opts;

  CLI::App* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  pre_opts.attach(*pre);
  bool resume = false, parallel = false, no_probe = false;
  std::string alpha_grid;
  pre->add_flag("--resume", resume, "continue from the run directory's checkpoint");
  pre->add_option("--alpha-grid", alpha_grid, "comma-separated alphas: one decoupled_pixel run each");
  pre->add_flag("--parallel", parallel, "run grid children concurrently");
  pre->add_flag("--no-probe", no_probe, "skip the linear probe after each grid child");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint or an embedding table");
  eval_opts.attach(*ev);
  std::string task, checkpoint, embeddings, out_dir;
  bool want_auc = false;
  std::size_t images = 4;
  ev->add_option("task", task, "finetune | probe | knn | attention")->required();
  ev->add_option("--checkpoint", checkpoint, "pretraining checkpoint (.ckpt)");
  ev->add_option("--embeddings", embeddings, "saved embedding table (knn only)");
  ev->add_option("--out-dir", out_dir, "report directory (default: <checkpoint dir>/eval/<task>)");
  ev->add_flag("--auc", want_auc, "require AUC (2-class data only)");
  ev->add_option("--images", images, "val images for the attention export");

  CLI::App* lad = app.add_subcommand("reproduce-ladder", "run the five ablation objectives and compare them");
  ladder_opts.attach(*lad);
  std::string presets;
  bool lad_parallel = false, lad_no_probe = false;
  lad->add_option("--presets", presets, "comma-separated presets, one ladder each");
  lad->add_flag("--parallel", lad_parallel, "run children concurrently");
  lad->add_flag("--no-probe", lad_no_probe, "skip the linear probe after each run");

  CLI::App* gen = app.add_subcommand("gen-synth", "write the synthetic dataset as PNG folders");
  synth_opts.attach(*gen);
  std::string synth_out;
  gen->add_option("--out-dir", synth_out, "dataset root to create")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (pre->parsed()) {
      const RunConfig cfg = pre_opts.resolve();
      if (!alpha_grid.empty()) {
        if (resume) throw ConfigError("--resume cannot be combined with --alpha-grid");
        const std::vector<double> alphas = parse_alphas(alpha_grid);
        const DataSplits data = load_data(cfg);
        const auto rows = run_grid(alpha_grid_rows(cfg, alphas), data, grid_dir(cfg, "alpha-grid"),
                                   {parallel, !no_probe});
        print_summary(rows);
      } else {
        const DataSplits data = load_data(cfg);
        const PretrainRun run = run_pretrain(cfg, data, resume);
        std::printf("%s\n", run.dir.string().c_str());
      }
    } else if (ev->parsed()) {
      const RunConfig cfg = eval_opts.resolve();
      EvalRequest req;
      req.task = parse_eval_task(task);
      req.checkpoint = checkpoint;
      req.embeddings = embeddings;
      req.out_dir = out_dir;
      req.require_auc = want_auc;
      req.attention_images = images;
      if (!req.embeddings.empty() && req.task != EvalTask::kKnn) {
        throw ConfigError("--embeddings applies to the knn task only");
      }
      for (const fs::path& p : run_eval(cfg, req)) std::printf("%s\n", p.string().c_str());
    } else if (lad->parsed()) {
      const RunConfig cfg = ladder_opts.resolve();
      const std::vector<Preset> list = parse_presets(presets);
      const DataSplits data = load_data(cfg);
      const auto rows = run_grid(ladder_rows(cfg, list), data, grid_dir(cfg, "ladder"), {lad_parallel, !lad_no_probe});
      print_summary(rows);
    } else if (gen->parsed()) {
      const RunConfig cfg = synth_opts.resolve();
      SyntheticSpec spec = cfg.data.synthetic;
      spec.image_size = cfg.model.image_size;
      const DatasetManifest m = generate_synthetic(spec, synth_out);
      save_manifest(m, fs::path(synth_out) / kManifestCacheFile);
      std::printf("%s: %zu classes, %zu train / %zu val images\n", synth_out.c_str(), m.class_names.size(),
                  m.train.size(), m.val.size());
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace sdmae
