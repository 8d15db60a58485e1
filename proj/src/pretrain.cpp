/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "sdmae/config.hpp"
#include "sdmae/error.hpp"
#include "sdmae/seed.hpp"

namespace fs = std::filesystem;

namespace sdmae {
namespace {

constexpr const char* kParamPrefix = "param/";
constexpr const char* kMomentMPrefix = "adam.m/";
constexpr const char* kMomentVPrefix = "adam.v/";

void copy_into(nn::Param& p, const ArchiveArray& a) {
  if (a.integer || a.shape != p.value.shape()) {
    throw CheckpointError(CheckpointErrorCode::kCorruptData,
                          "array '" + a.name + "' has shape " + shape_string(a.shape) + ", model expects " +
                              shape_string(p.value.shape()));
  }
  p.value.values() = a.f64;
}

void load_params(PretrainModel& model, const Archive& archive) {
  for (nn::Param* p : model.params()) copy_into(*p, archive.get(kParamPrefix + p->name));
}

nlohmann::json config_meta(const ModelConfig& model, const TrainConfig& train) {
  RunConfig cfg;
  cfg.model = model;
  cfg.train = train;
  return {{"kind", "pretrain"}, {"model", section_json(cfg, "model.")}, {"train", section_json(cfg, "train.")}};
}

}  // namespace

std::string to_string(Preset p) {
  switch (p) {
    case Preset::kNone: return "none";
    case Preset::kS1: return "S1";
    case Preset::kS2: return "S2";
    case Preset::kS3: return "S3";
    case Preset::kS4: return "S4";
  }
  return "none";
}

Preset parse_preset(std::string_view name) {
  if (name == "none" || name.empty()) return Preset::kNone;
  if (name == "S1" || name == "s1") return Preset::kS1;
  if (name == "S2" || name == "s2") return Preset::kS2;
  if (name == "S3" || name == "s3") return Preset::kS3;
  if (name == "S4" || name == "s4") return Preset::kS4;
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected none, S1, S2, S3, S4)");
}

PresetValues preset_values(Preset p) {
  switch (p) {
    case Preset::kS1: return {1e-4, 5e-4, 5e-3};
    case Preset::kS2: return {1e-4, 5e-4, 5e-2};
    case Preset::kS3: return {1.5e-4, 5e-4, 5e-2};
    case Preset::kS4: return {1.5e-4, 1e-3, 5e-2};
    case Preset::kNone: break;
  }
  throw ConfigError("preset 'none' has no values");
}

void TrainConfig::apply_preset(Preset p) {
  preset = p;
  if (p == Preset::kNone) return;
  const PresetValues v = preset_values(p);
  base_lr = v.pretrain_lr;
  finetune_lr = v.finetune_lr;
  finetune_weight_decay = v.finetune_weight_decay;
}

double TrainConfig::effective_lr() const {
  return scale_lr_by_batch ? base_lr * static_cast<double>(batch_size) / 256.0 : base_lr;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (warmup_epochs > epochs) throw ConfigError("train.warmup_epochs exceeds train.epochs");
  if (!(base_lr >= 0.0)) throw ConfigError("train.base_lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("train.mask_ratio must be in [0, 1)");
  if (!(crop_min_scale > 0.0 && crop_min_scale <= 1.0)) throw ConfigError("train.crop_min_scale must be in (0, 1]");
  if (!(finetune_lr >= 0.0 && finetune_weight_decay >= 0.0)) {
    throw ConfigError("fine-tuning lr and weight decay must be >= 0");
  }
  try {
    loss.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// -------------------------------------------------------------- Trainer

Trainer::Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg, std::size_t steps_per_epoch)
    : model_cfg_(model_cfg),
      train_cfg_(train_cfg),
      model_(model_cfg, train_cfg.loss),
      optimizer_(AdamW::Options{0.9, 0.95, 1e-8, train_cfg.weight_decay}),
      fingerprint_(config_fingerprint(model_cfg, train_cfg)),
      steps_per_epoch_(steps_per_epoch),
      total_steps_(train_cfg.epochs * steps_per_epoch),
      warmup_steps_(train_cfg.warmup_epochs * steps_per_epoch) {
  train_cfg.validate();
  if (steps_per_epoch == 0) throw ConfigError("steps per epoch must be >= 1");
}

double Trainer::lr_for(std::size_t step) const {
  return lr_at(step, total_steps_, warmup_steps_, train_cfg_.effective_lr());
}

double Trainer::current_lr() const { return lr_for(step_); }

LossReport Trainer::step(const ImageBatch& images) {
  if (step_ >= total_steps_) throw ParameterError("training schedule is complete");
  const PatchSequence seq = patchify(images, model_cfg_.patch_size);
  const std::uint64_t mask_index = train_cfg_.freeze_masks ? 0 : step_;
  const MaskPlan plan = random_mask(seq, train_cfg_.mask_ratio, mix_seed(train_cfg_.seed, kStreamMask, mask_index));
  model_.zero_grad();
  const LossReport report = model_.forward(seq, plan);
  model_.backward();
  optimizer_.step(model_.params(), current_lr());
  ++step_;
  return report;
}

Archive Trainer::checkpoint() const {
  auto& self = const_cast<Trainer&>(*this);
  Archive a;
  a.fingerprint = fingerprint_;
  a.meta = config_meta(model_cfg_, train_cfg_);
  for (nn::Param* p : self.model_.params()) a.arrays.push_back(ArchiveArray::from_tensor(kParamPrefix + p->name, p->value));
  for (const auto& [name, mo] : optimizer_.moments()) {
    a.arrays.push_back(ArchiveArray::from_tensor(kMomentMPrefix + name, mo.m));
    a.arrays.push_back(ArchiveArray::from_tensor(kMomentVPrefix + name, mo.v));
  }
  a.arrays.push_back(ArchiveArray::from_ints(
      "state", {std::int64_t(step_), std::int64_t(optimizer_.steps_taken()), std::int64_t(steps_per_epoch_)}));
  return a;
}

void Trainer::restore(const Archive& archive) {
  verify_fingerprint(archive, fingerprint_);
  const ArchiveArray& state = archive.get("state");
  if (!state.integer || state.i64.size() != 3 || state.i64[0] < 0 || state.i64[1] < 0) {
    throw CheckpointError(CheckpointErrorCode::kCorruptData, "malformed schedule state");
  }
  if (std::size_t(state.i64[2]) != steps_per_epoch_) {
    throw CheckpointError(CheckpointErrorCode::kFingerprintMismatch,
                          "checkpoint was written with " + std::to_string(state.i64[2]) +
                              " steps per epoch, this run has " + std::to_string(steps_per_epoch_));
  }
  if (std::size_t(state.i64[0]) > total_steps_) {
    throw CheckpointError(CheckpointErrorCode::kCorruptData, "schedule step beyond the run length");
  }
  load_params(model_, archive);
  auto& moments = optimizer_.moments();
  moments.clear();
  for (const auto& arr : archive.arrays) {
    if (arr.name.starts_with(kMomentMPrefix)) {
      const std::string name = arr.name.substr(std::string_view(kMomentMPrefix).size());
      moments[name].m = arr.tensor();
      moments[name].v = archive.get(kMomentVPrefix + name).tensor();
    }
  }
  optimizer_.set_steps_taken(std::uint64_t(state.i64[1]));
  step_ = std::size_t(state.i64[0]);
}

// ------------------------------------------------------------- pretrain

std::vector<std::string> metrics_columns(LossMode mode) {
  std::vector<std::string> cols = {"step", "epoch", "lr", "total", "recon_masked"};
  LossWeights w;
  w.mode = mode;
  if (w.uses_visible()) cols.emplace_back("recon_visible");
  if (w.uses_distill()) cols.emplace_back("distill");
  return cols;
}

PretrainResult pretrain(const ImageSet& data, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const PretrainOptions& options) {
  if (data.size() == 0) throw DataError("pretraining data is empty");
  model_cfg.validate();
  train_cfg.validate();
  if (data.pixels.rank() != 4 || data.image_size() != model_cfg.image_size ||
      data.pixels.dim(3) != model_cfg.channels) {
    throw ConfigError("data images are " + shape_string(data.pixels.shape()) + ", model expects " +
                      std::to_string(model_cfg.image_size) + "x" + std::to_string(model_cfg.image_size) + "x" +
                      std::to_string(model_cfg.channels));
  }
  const std::size_t n = data.size();
  const std::size_t batch = std::min(train_cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  Trainer trainer(model_cfg, train_cfg, steps_per_epoch);

  const bool write = !options.run_dir.empty();
  const fs::path ckpt_path = options.run_dir / kCheckpointFile;
  if (write) fs::create_directories(options.run_dir);
  if (options.resume) {
    if (!write || !fs::exists(ckpt_path)) {
      throw CheckpointError(CheckpointErrorCode::kIo, "resume requested but no checkpoint at " + ckpt_path.string());
    }
    trainer.restore(load_archive(ckpt_path));
    spdlog::info("resumed at step {} (lr {})", trainer.steps_done(), trainer.current_lr());
  }

  const LossWeights& w = train_cfg.loss;
  std::ofstream metrics, epochs_log;
  if (write) {
    const fs::path mpath = options.run_dir / kMetricsFile, epath = options.run_dir / kEpochsFile;
    const bool fresh_m = !fs::exists(mpath) || fs::file_size(mpath) == 0;
    const bool fresh_e = !fs::exists(epath) || fs::file_size(epath) == 0;
    metrics.open(mpath, std::ios::app);
    epochs_log.open(epath, std::ios::app);
    if (!metrics || !epochs_log) throw IoError("cannot open logs in " + options.run_dir.string());
    if (fresh_m) {
      const auto cols = metrics_columns(w.mode);
      for (std::size_t i = 0; i < cols.size(); ++i) metrics << (i ? "," : "") << cols[i];
      metrics << "\n";
    }
    if (fresh_e) {
      auto cols = metrics_columns(w.mode);
      cols.erase(cols.begin());
      cols.insert(cols.begin() + 1, "steps");
      for (std::size_t i = 0; i < cols.size(); ++i) epochs_log << (i ? "," : "") << cols[i];
      epochs_log << "\n";
    }
  }
  auto epoch_row = [&](std::ostream& out, const EpochSummary& s) {
    out << s.epoch << "," << s.steps << "," << format_double(s.lr) << "," << format_double(s.total) << ","
        << format_double(s.recon_masked);
    if (w.uses_visible()) out << "," << format_double(s.recon_visible);
    if (w.uses_distill()) out << "," << format_double(s.distill);
    out << "\n";
  };

  PretrainResult result;
  const std::size_t start_epoch = trainer.steps_done() / steps_per_epoch;
  std::size_t end_epoch = train_cfg.epochs;
  if (options.max_epochs) end_epoch = std::min(end_epoch, start_epoch + options.max_epochs);
  AugmentOptions aug;
  aug.min_scale = train_cfg.crop_min_scale;

  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(train_cfg.seed, kStreamOrder, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    EpochSummary sum;
    sum.epoch = epoch + 1;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = s * batch, hi = std::min(n, lo + batch);
      ImageBatch images = data.batch(std::span(order).subspan(lo, hi - lo));
      if (train_cfg.augment) images = augment(images, aug, mix_seed(train_cfg.seed, kStreamAugment, trainer.steps_done()));
      const double lr = trainer.current_lr();
      LossReport r;
      try {
        r = trainer.step(images);
      } catch (const NumericError& e) {
        spdlog::error("step {}: {}; stopping, last checkpoint kept", trainer.steps_done(), e.what());
        if (write) metrics.flush();
        throw;
      }
      EpochSummary one;
      one.total = r.total;
      one.recon_masked = r.recon_masked;
      one.recon_visible = r.recon_visible;
      one.distill = r.distill;
      if (write) {
        metrics << trainer.steps_done() << "," << (epoch + 1) << ",";
        metrics << format_double(lr) << "," << format_double(r.total) << "," << format_double(r.recon_masked);
        if (w.uses_visible()) metrics << "," << format_double(r.recon_visible);
        if (w.uses_distill()) metrics << "," << format_double(r.distill);
        metrics << "\n";
      }
      sum.total += r.total;
      sum.recon_masked += r.recon_masked;
      sum.recon_visible += r.recon_visible;
      sum.distill += r.distill;
      sum.lr = lr;
      ++sum.steps;
    }
    const double k = double(sum.steps);
    sum.total /= k;
    sum.recon_masked /= k;
    sum.recon_visible /= k;
    sum.distill /= k;
    result.epochs.push_back(sum);
    spdlog::info("epoch {}/{} lr {:.3e} loss {:.6f} (masked {:.6f}, visible {:.6f}, distill {:.6f})", sum.epoch,
                 train_cfg.epochs, sum.lr, sum.total, sum.recon_masked, sum.recon_visible, sum.distill);
    if (write) {
      epoch_row(epochs_log, sum);
      metrics.flush();
      epochs_log.flush();
      const bool last = sum.epoch == train_cfg.epochs || epoch + 1 == end_epoch;
      const bool periodic = train_cfg.checkpoint_every && sum.epoch % train_cfg.checkpoint_every == 0;
      if (last || periodic) save_archive(trainer.checkpoint(), ckpt_path);
    }
    if (options.on_epoch) options.on_epoch(sum);
  }
  result.checkpoint = trainer.checkpoint();
  return result;
}

LoadedModel load_model(const Archive& archive) {
  RunConfig cfg;
  try {
    apply_section(cfg, archive.meta.at("model"));
    apply_section(cfg, archive.meta.at("train"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kCorruptManifest, std::string("checkpoint metadata: ") + e.what());
  }
  if (config_fingerprint(cfg.model, cfg.train) != archive.fingerprint) {
    throw CheckpointError(CheckpointErrorCode::kFingerprintMismatch,
                          "checkpoint metadata does not match its fingerprint");
  }
  LoadedModel out{cfg.model, cfg.train, std::make_unique<PretrainModel>(cfg.model, cfg.train.loss)};
  load_params(*out.model, archive);
  return out;
}

}  // namespace sdmae
