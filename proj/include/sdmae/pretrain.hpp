/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sdmae/backbone.hpp"
#include "sdmae/checkpoint.hpp"
#include "sdmae/datakit.hpp"
#include "sdmae/model.hpp"
#include "sdmae/objectives.hpp"
#include "sdmae/optim.hpp"

namespace sdmae {

/// Hyper-parameter presets: (pretrain lr, fine-tune lr, fine-tune weight decay).
enum class Preset { kNone, kS1, kS2, kS3, kS4 };

struct PresetValues {
  double pretrain_lr;
  double finetune_lr;
  double finetune_weight_decay;
};

std::string to_string(Preset p);
Preset parse_preset(std::string_view name);
/// Throws ConfigError for kNone.
PresetValues preset_values(Preset p);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 5;
  double base_lr = 1.5e-4;
  double weight_decay = 0.05;
  std::size_t batch_size = 64;
  double mask_ratio = 0.6;
  LossWeights loss;
  std::uint64_t seed = 0;
  Preset preset = Preset::kNone;

  /// effective lr = base_lr * batch_size / 256 when set.
  bool scale_lr_by_batch = true;
  bool augment = true;
  double crop_min_scale = 0.2;
  /// Reuse the step-0 mask for every step (debugging / overfit runs).
  bool freeze_masks = false;
  std::size_t checkpoint_every = 10;  // epochs; 0: only at the end

  double finetune_lr = 5e-4;
  double finetune_weight_decay = 0.05;

  /// Copies the preset's learning rates and fine-tune weight decay.
  void apply_preset(Preset p);
  double effective_lr() const;
  void validate() const;
};

/// Mean loss components over one epoch.
struct EpochSummary {
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  double lr = 0.0;        // rate used by the epoch's last step
  double total = 0.0;
  double recon_masked = 0.0;
  double recon_visible = 0.0;
  double distill = 0.0;
};

/// Owns model + optimizer + schedule position.
class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg, std::size_t steps_per_epoch);

  /// One optimizer step at the schedule's current position. Throws
  /// NumericError (parameters untouched) when the loss is not finite.
  LossReport step(const ImageBatch& images);

  std::size_t steps_done() const { return step_; }
  std::size_t total_steps() const { return total_steps_; }
  std::size_t warmup_steps() const { return warmup_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  /// Rate the next step will use.
  double current_lr() const;
  double lr_for(std::size_t step) const;

  PretrainModel& model() { return model_; }
  AdamW& optimizer() { return optimizer_; }
  const ModelConfig& model_config() const { return model_cfg_; }
  const TrainConfig& train_config() const { return train_cfg_; }
  const std::string& fingerprint() const { return fingerprint_; }

  /// Snapshot of parameters, optimizer moments and schedule position.
  Archive checkpoint() const;
  /// Throws CheckpointError (kFingerprintMismatch, kMissingArray, ...).
  void restore(const Archive& archive);

 private:
  ModelConfig model_cfg_;
  TrainConfig train_cfg_;
  PretrainModel model_;
  AdamW optimizer_;
  std::string fingerprint_;
  std::size_t steps_per_epoch_;
  std::size_t total_steps_;
  std::size_t warmup_steps_;
  std::size_t step_ = 0;
};

struct PretrainOptions {
  /// Where metrics.csv, epochs.csv and checkpoint.ckpt go; empty writes nothing.
  std::filesystem::path run_dir;
  /// Continue from run_dir/checkpoint.ckpt.
  bool resume = false;
  /// Stop after this many epochs in this call (0: run to the end).
  std::size_t max_epochs = 0;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct PretrainResult {
  std::vector<EpochSummary> epochs;
  Archive checkpoint;
};

inline constexpr const char* kCheckpointFile = "checkpoint.ckpt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kEpochsFile = "epochs.csv";

/// Column names of metrics.csv for a loss mode.
std::vector<std::string> metrics_columns(LossMode mode);

/// Self-supervised training over `data` (labels unused).
PretrainResult pretrain(const ImageSet& data, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const PretrainOptions& options = {});

/// Rebuilds the model stored in a checkpoint (configs read from its metadata).
struct LoadedModel {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::unique_ptr<PretrainModel> model;
};
LoadedModel load_model(const Archive& archive);

}  // namespace sdmae
