/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdmae/config.hpp"
#include "sdmae/datakit.hpp"
#include "sdmae/evaluate.hpp"
#include "sdmae/pretrain.hpp"

// Run directories and the experiment drivers behind the command line.

namespace sdmae {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitCheckpoint = 5,
};

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

inline constexpr const char* kOutputRootEnv = "SDMAE_OUTPUT_ROOT";
inline constexpr const char* kResolvedConfigFile = "config.resolved";
inline constexpr const char* kManifestCacheFile = "manifest.json";

/// output.dir if set, else $SDMAE_OUTPUT_ROOT, else ./runs.
std::filesystem::path output_root(const RunConfig& cfg);
/// output.run_name if set, else "<loss mode>-seed<seed>".
std::string run_name(const RunConfig& cfg);
std::filesystem::path run_directory(const RunConfig& cfg);

struct DataSplits {
  ImageSet train;
  ImageSet val;
  /// "synthetic" or the dataset root.
  std::string source;
};

/// Folder dataset (manifest cached as root/manifest.json) or, when data.root
/// is empty, the synthetic generator at the model's image size.
DataSplits load_data(const RunConfig& cfg);
/// Reuses root/manifest.json when it was built with the same options and
/// every listed file still exists; otherwise scans and tries to refresh it.
DatasetManifest cached_manifest(const std::filesystem::path& root, const ScanOptions& opts,
                                bool rescan = false);

struct PretrainRun {
  std::filesystem::path dir;
  PretrainResult result;
};

/// Pretrains into `dir` (run_directory(cfg) when empty) and writes the
/// resolved config snapshot there first.
PretrainRun run_pretrain(const RunConfig& cfg, const DataSplits& data, bool resume = false,
                         std::filesystem::path dir = {});

struct GridRow {
  std::string label;
  std::string masked_part;
  std::string visible_part;
  RunConfig config;
  std::filesystem::path dir;
  std::vector<EpochSummary> epochs;
  std::optional<EvalReport> probe;
};

struct GridOptions {
  bool parallel = false;
  bool probe = true;
};

/// Runs every row's pretraining (and a linear probe on the val split), then
/// writes `summary.csv` under `dir`. Children go to dir/<index>-<label>.
std::vector<GridRow> run_grid(std::vector<GridRow> rows, const DataSplits& data,
                              const std::filesystem::path& dir, const GridOptions& opts);

/// The five ablation rows over `base`, one block per preset (empty: base as is).
std::vector<GridRow> ladder_rows(const RunConfig& base, std::span<const Preset> presets);
/// decoupled_pixel at each alpha.
std::vector<GridRow> alpha_grid_rows(const RunConfig& base, std::span<const double> alphas);

/// True when every epoch's distill average is finite and the last is below the first.
bool distill_decreasing(const std::vector<EpochSummary>& epochs);

enum class EvalTask { kFinetune, kProbe, kKnn, kAttention };
std::string to_string(EvalTask t);
EvalTask parse_eval_task(std::string_view name);

struct EvalRequest {
  EvalTask task = EvalTask::kProbe;
  std::filesystem::path checkpoint;
  /// knn only: read this saved table instead of encoding the data.
  std::filesystem::path embeddings;
  std::filesystem::path out_dir;
  /// Fail unless AUC can be reported (two classes).
  bool require_auc = false;
  /// attention only: number of val images exported.
  std::size_t attention_images = 4;
};

/// Dispatches one evaluation task and returns the files it wrote.
std::vector<std::filesystem::path> run_eval(const RunConfig& cfg, const EvalRequest& req);

/// Entry point of the `sdmae` executable.
int cli_main(int argc, const char* const* argv);

}  // namespace sdmae
