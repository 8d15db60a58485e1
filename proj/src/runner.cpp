/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/runner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <future>

#include <spdlog/spdlog.h>

#include "sdmae/checkpoint.hpp"
#include "sdmae/error.hpp"

namespace fs = std::filesystem;

namespace sdmae {
namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

bool manifest_usable(const DatasetManifest& m, const fs::path& root, const ScanOptions& opts) {
  if (opts.image_size != 0 && m.image_size != opts.image_size) return false;
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root / "train")) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (std::find(opts.ignore_classes.begin(), opts.ignore_classes.end(), name) == opts.ignore_classes.end()) {
      classes.push_back(name);
    }
  }
  std::sort(classes.begin(), classes.end());
  if (classes != m.class_names) return false;
  for (Split s : {Split::kTrain, Split::kVal}) {
    for (const auto& e : m.entries(s))
      if (!fs::exists(root / e.path)) return false;
  }
  return true;
}

std::string slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_';
    if (keep) {
      out += c;
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::string fmt(double v) { return format_double(v); }

void write_summary(const std::vector<GridRow>& rows, const fs::path& path) {
  std::string text =
      "row,label,preset,mode,alpha,beta,masked_part,visible_part,epochs,final_total,final_masked,"
      "final_visible,final_distill,distill_decreasing,probe_acc_mean,probe_acc_std,probe_f1_mean,run_dir\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const GridRow& r = rows[i];
    const LossWeights& w = r.config.train.loss;
    const EpochSummary last = r.epochs.empty() ? EpochSummary{} : r.epochs.back();
    text += std::to_string(i + 1) + "," + r.label + "," + to_string(r.config.train.preset) + "," +
            to_string(w.mode) + "," + fmt(w.alpha) + "," + fmt(w.beta) + "," + r.masked_part + "," +
            r.visible_part + "," + std::to_string(r.epochs.size()) + "," + fmt(last.total) + "," +
            fmt(last.recon_masked) + "," + fmt(last.recon_visible) + ",";
    text += w.uses_distill() ? fmt(last.distill) + "," + (distill_decreasing(r.epochs) ? "true" : "false") : ",";
    text += ",";
    if (r.probe) {
      text += fmt(r.probe->accuracy.mean) + "," + fmt(r.probe->accuracy.std) + "," + fmt(r.probe->macro_f1.mean);
    } else {
      text += ",,";
    }
    text += "," + r.dir.string() + "\n";
  }
  write_text(path, text);
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const CheckpointError*>(&e)) return kExitCheckpoint;
  return kExitError;
}

fs::path output_root(const RunConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

std::string run_name(const RunConfig& cfg) {
  if (!cfg.run_name.empty()) return cfg.run_name;
  return to_string(cfg.train.loss.mode) + "-seed" + std::to_string(cfg.train.seed);
}

fs::path run_directory(const RunConfig& cfg) { return output_root(cfg) / run_name(cfg); }

DatasetManifest cached_manifest(const fs::path& root, const ScanOptions& opts, bool rescan) {
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root.string());
  const fs::path cache = root / kManifestCacheFile;
  if (!rescan && fs::exists(cache)) {
    try {
      DatasetManifest m = load_manifest(cache);
      m.root = root;
      if (manifest_usable(m, root, opts)) {
        spdlog::debug("using cached manifest {}", cache.string());
        return m;
      }
      spdlog::info("cached manifest {} is stale, rescanning", cache.string());
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable manifest cache {}: {}", cache.string(), e.what());
    }
  }
  DatasetManifest m = scan_folder(root, opts);
  for (const auto& w : m.warnings) spdlog::warn("{}", w);
  for (const auto& err : m.errors) spdlog::warn("skipped {}", err);
  try {
    save_manifest(m, cache);
  } catch (const std::exception& e) {
    spdlog::debug("manifest cache not written: {}", e.what());
  }
  return m;
}

DataSplits load_data(const RunConfig& cfg) {
  if (cfg.data.root.empty()) {
    SyntheticSpec spec = cfg.data.synthetic;
    spec.image_size = cfg.model.image_size;
    SyntheticDataset d = synthesize(spec);
    spdlog::info("synthetic data: {} classes, {} train / {} val images of {}px", spec.num_classes, d.train.size(),
                 d.val.size(), spec.image_size);
    return {std::move(d.train), std::move(d.val), "synthetic"};
  }
  ScanOptions opts;
  opts.ignore_classes = cfg.data.ignore_classes;
  const DatasetManifest m = cached_manifest(cfg.data.root, opts);
  DataSplits out{load_split(m, Split::kTrain, cfg.model.image_size), load_split(m, Split::kVal, cfg.model.image_size),
                 cfg.data.root};
  if (out.train.size() == 0) throw DataError("no training images under " + cfg.data.root);
  spdlog::info("dataset {}: {} classes, {} train / {} val images", cfg.data.root, m.class_names.size(),
               out.train.size(), out.val.size());
  return out;
}

PretrainRun run_pretrain(const RunConfig& cfg, const DataSplits& data, bool resume, fs::path dir) {
  cfg.validate();
  if (dir.empty()) dir = run_directory(cfg);
  if (resume && !fs::exists(dir / kCheckpointFile)) {
    throw CheckpointError(CheckpointErrorCode::kIo,
                          "resume requested but no checkpoint at " + (dir / kCheckpointFile).string());
  }
  fs::create_directories(dir);
  write_text(dir / kResolvedConfigFile, to_config_text(cfg));
  spdlog::info("run directory {}", dir.string());
  PretrainOptions opts;
  opts.run_dir = dir;
  opts.resume = resume;
  return {dir, pretrain(data.train, cfg.model, cfg.train, opts)};
}

bool distill_decreasing(const std::vector<EpochSummary>& epochs) {
  if (epochs.size() < 2) return false;
  for (const auto& e : epochs)
    if (!std::isfinite(e.distill)) return false;
  return epochs.back().distill < epochs.front().distill;
}

std::vector<GridRow> ladder_rows(const RunConfig& base, std::span<const Preset> presets) {
  std::vector<Preset> blocks(presets.begin(), presets.end());
  if (blocks.empty()) blocks.push_back(base.train.preset);
  std::vector<GridRow> rows;
  for (Preset p : blocks) {
    RunConfig cfg = base;
    if (p != cfg.train.preset) {
      cfg.train.preset = p;
      if (p != Preset::kNone) cfg.train.apply_preset(p);
    }
    for (const LadderRow& l : ablation_ladder()) {
      GridRow r;
      r.label = blocks.size() > 1 ? to_string(p) + "/" + l.label : l.label;
      r.masked_part = l.masked_part;
      r.visible_part = l.visible_part;
      r.config = cfg;
      r.config.train.loss = l.weights;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::vector<GridRow> alpha_grid_rows(const RunConfig& base, std::span<const double> alphas) {
  std::vector<GridRow> rows;
  for (double a : alphas) {
    GridRow r;
    r.label = "alpha=" + fmt(a);
    r.masked_part = "pixel/mse/" + fmt(1.0 - a);
    r.visible_part = a > 0.0 ? "pixel/mse/" + fmt(a) : "-";
    r.config = base;
    r.config.train.loss = {a, 0.0, LossMode::kDecoupledPixel};
    r.config.train.loss.validate();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<GridRow> run_grid(std::vector<GridRow> rows, const DataSplits& data, const fs::path& dir,
                              const GridOptions& opts) {
  for (const auto& r : rows) r.config.validate();
  fs::create_directories(dir);
  auto run_one = [&](std::size_t i) {
    GridRow& r = rows[i];
    r.dir = dir / (std::to_string(i + 1) + "-" + slug(r.label));
    spdlog::info("[{}/{}] {}", i + 1, rows.size(), r.label);
    PretrainRun run = run_pretrain(r.config, data, false, r.dir);
    r.epochs = run.result.epochs;
    if (opts.probe) {
      LoadedModel lm = load_model(run.result.checkpoint);
      r.probe = linear_probe(lm.model->encoder(), lm.model_cfg, data.train, data.val, r.config.eval);
      write_report_csv(*r.probe, r.dir / "probe.csv");
      write_report_json(*r.probe, r.dir / "probe.json");
    }
  };
  if (opts.parallel) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < rows.size(); ++i) jobs.push_back(std::async(std::launch::async, run_one, i));
    // Wait for every child before surfacing the first failure.
    std::exception_ptr first;
    for (auto& j : jobs) {
      try {
        j.get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) run_one(i);
  }
  write_summary(rows, dir / "summary.csv");
  spdlog::info("summary written to {}", (dir / "summary.csv").string());
  return rows;
}

std::string to_string(EvalTask t) {
  switch (t) {
    case EvalTask::kFinetune: return "finetune";
    case EvalTask::kProbe: return "probe";
    case EvalTask::kKnn: return "knn";
    case EvalTask::kAttention: return "attention";
  }
  return "?";
}

EvalTask parse_eval_task(std::string_view name) {
  if (name == "finetune") return EvalTask::kFinetune;
  if (name == "probe") return EvalTask::kProbe;
  if (name == "knn") return EvalTask::kKnn;
  if (name == "attention") return EvalTask::kAttention;
  throw ConfigError("unknown eval task '" + std::string(name) + "' (expected finetune|probe|knn|attention)");
}

std::vector<fs::path> run_eval(const RunConfig& base, const EvalRequest& req) {
  base.eval.validate();
  fs::path out = req.out_dir;
  if (out.empty()) {
    const fs::path anchor = req.checkpoint.empty() ? req.embeddings : req.checkpoint;
    out = anchor.parent_path() / "eval" / to_string(req.task);
  }
  std::vector<fs::path> written;

  if (req.task == EvalTask::kKnn && !req.embeddings.empty()) {
    if (req.require_auc) throw ConfigError("AUC is not defined for the knn task");
    const EmbeddingTable table = load_embeddings(req.embeddings);
    table.validate();
    fs::create_directories(out);
    const std::size_t max_k = std::min(base.eval.knn_max_k, table.labels.size() - 1);
    const std::vector<double> curve = knn_mismatch_rate(table, max_k);
    std::string text = "k,mismatch_rate\n";
    for (std::size_t k = 0; k < curve.size(); ++k) text += std::to_string(k + 1) + "," + fmt(curve[k]) + "\n";
    write_text(out / "knn.csv", text);
    return {out / "knn.csv"};
  }

  if (req.checkpoint.empty()) throw ConfigError("eval " + to_string(req.task) + " needs --checkpoint");
  const Archive archive = load_archive(req.checkpoint);
  LoadedModel lm = load_model(archive);
  RunConfig cfg = base;
  cfg.model = lm.model_cfg;
  const DataSplits data = load_data(cfg);
  check_compatible(lm.model_cfg, data.train);
  check_compatible(lm.model_cfg, data.val);
  if (req.require_auc && data.val.num_classes() != 2) {
    throw ConfigError("AUC requested but the data has " + std::to_string(data.val.num_classes()) +
                      " classes; AUC is reported for 2-class tasks only");
  }
  fs::create_directories(out);
  Encoder& enc = lm.model->encoder();

  switch (req.task) {
    case EvalTask::kFinetune:
    case EvalTask::kProbe: {
      EvalReport r = req.task == EvalTask::kFinetune
                         ? finetune(archive, data.train, data.val, cfg.train, cfg.eval)
                         : linear_probe(enc, lm.model_cfg, data.train, data.val, cfg.eval);
      r.source = req.checkpoint.string();
      write_report_csv(r, out / "report.csv");
      write_report_json(r, out / "report.json");
      spdlog::info("{}: accuracy {:.4f} +- {:.4f}, macro-F1 {:.4f} +- {:.4f}", r.task, r.accuracy.mean,
                   r.accuracy.std, r.macro_f1.mean, r.macro_f1.std);
      written = {out / "report.csv", out / "report.json"};
      break;
    }
    case EvalTask::kKnn: {
      EmbeddingTable table;
      table.source = req.checkpoint.string();
      const Tensor all = extract_features(enc, data.val, lm.model_cfg.patch_size, cfg.eval.pooling);
      std::vector<std::size_t> keep(data.val.size());
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
      if (cfg.eval.knn_per_class > 0) keep = balanced_subsample(data.val.labels, cfg.eval.knn_per_class, cfg.eval.seed);
      table.vectors = Tensor::matrix(keep.size(), all.cols());
      for (std::size_t i = 0; i < keep.size(); ++i) {
        std::copy(all.row(keep[i]).begin(), all.row(keep[i]).end(), table.vectors.row(i).begin());
        table.labels.push_back(data.val.labels[keep[i]]);
      }
      save_embeddings(table, out / "embeddings.json");
      if (table.labels.size() < 2) throw DataError("knn needs at least 2 items");
      const std::size_t max_k = std::min(cfg.eval.knn_max_k, table.labels.size() - 1);
      const std::vector<double> curve = knn_mismatch_rate(table, max_k);
      std::string text = "k,mismatch_rate\n";
      for (std::size_t k = 0; k < curve.size(); ++k) text += std::to_string(k + 1) + "," + fmt(curve[k]) + "\n";
      write_text(out / "knn.csv", text);
      written = {out / "embeddings.json", out / "knn.csv"};
      break;
    }
    case EvalTask::kAttention: {
      const std::size_t n = std::min(req.attention_images, data.val.size());
      if (n == 0) throw DataError("attention export needs at least one val image");
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      written = export_attention(enc, lm.model_cfg, data.val.batch(idx), out);
      spdlog::info("wrote {} attention maps to {}", written.size(), out.string());
      break;
    }
  }
  return written;
}

}  // namespace sdmae
