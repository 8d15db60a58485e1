/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdmae/backbone.hpp"
#include "sdmae/checkpoint.hpp"
#include "sdmae/datakit.hpp"
#include "sdmae/pretrain.hpp"

namespace sdmae {

/// How image-level features are read off the encoder on full images.
enum class Pooling { kCls, kMean, kClsMean };
std::string to_string(Pooling p);
Pooling parse_pooling(std::string_view name);

struct EvalConfig {
  Pooling pooling = Pooling::kCls;
  std::size_t seeds = 3;
  std::uint64_t seed = 0;

  std::size_t probe_epochs = 100;
  double probe_lr = 1e-2;
  double probe_weight_decay = 0.0;
  std::size_t probe_batch = 256;
  /// Standardize probe features with train-split statistics.
  bool standardize = true;

  std::size_t finetune_epochs = 10;
  std::size_t finetune_warmup_epochs = 1;
  std::size_t finetune_batch = 32;

  std::size_t knn_max_k = 20;
  /// Balanced subsample per class for the kNN diagnostic (0: all items).
  std::size_t knn_per_class = 0;

  void validate() const;
};

// ------------------------------------------------------------ metrics

/// confusion[t][p]: items of true class t predicted as p.
using Confusion = std::vector<std::vector<std::size_t>>;

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> pred, std::size_t classes);
double accuracy(const Confusion& c);
/// Unweighted mean of per-class F1; a class with no true and no predicted
/// items scores 0 and still counts.
double macro_f1(const Confusion& c);
/// Mann-Whitney rank AUC of `scores` for the positive label 1 (ties share
/// ranks). Throws ParameterError unless both labels are present.
double binary_auc(std::span<const double> scores, std::span<const int> labels);

struct SeedResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> auc;
  Confusion confusion;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for one run
};
MeanStd mean_std(std::span<const double> values);

struct EvalReport {
  std::string task;
  std::string source;
  std::vector<std::string> class_names;
  std::vector<std::size_t> class_counts;  // held-out items per class
  std::vector<SeedResult> runs;
  MeanStd accuracy;
  MeanStd macro_f1;
  std::optional<MeanStd> auc;

  /// Fills the aggregates from `runs`.
  void summarize();
};

void write_report_csv(const EvalReport& r, const std::filesystem::path& path);
void write_report_json(const EvalReport& r, const std::filesystem::path& path);

// ---------------------------------------------------------- features

/// Encoder features on full (unmasked) images, (n, width or 2*width).
Tensor extract_features(Encoder& encoder, const ImageSet& data, std::size_t patch_size,
                        Pooling pooling, std::size_t batch = 64);

struct EmbeddingTable {
  Tensor vectors;  // (n, d)
  std::vector<int> labels;
  std::string source;

  /// n >= 2, finite entries, labels in [0, num_classes).
  void validate(std::size_t num_classes = 0) const;
};

void save_embeddings(const EmbeddingTable& t, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

/// Mean fraction of each item's k nearest neighbours (cosine, self excluded,
/// ties broken by lower index) whose label differs; entry k-1 is the rate
/// for k, for k = 1..max_k. Throws ParameterError unless max_k < n.
std::vector<double> knn_mismatch_rate(const EmbeddingTable& table, std::size_t max_k);
/// Single-threaded all-pairs version with a full sort per item.
std::vector<double> knn_mismatch_rate_reference(const EmbeddingTable& table, std::size_t max_k);

// ------------------------------------------------------- classifiers

/// Trains a softmax classifier on frozen features. The head starts at zero
/// weights with log-prior biases, so zero epochs predicts the majority class.
struct ProbeResult {
  SeedResult metrics;
  std::vector<int> predictions;
  Tensor weight;  // (classes, d)
  std::vector<double> bias;
};
ProbeResult train_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                        std::span<const int> test_y, std::size_t classes, const EvalConfig& cfg,
                        std::uint64_t seed);

/// Frozen-encoder probe over cfg.seeds seeds; the encoder arrays are not modified.
EvalReport linear_probe(Encoder& encoder, const ModelConfig& model_cfg, const ImageSet& train,
                        const ImageSet& test, const EvalConfig& cfg);

/// End-to-end fine-tuning of a copy of the checkpoint's encoder plus a linear
/// head, once per seed, with lr/wd taken from `train_cfg` (fine-tune fields).
EvalReport finetune(const Archive& checkpoint, const ImageSet& train, const ImageSet& test,
                    const TrainConfig& train_cfg, const EvalConfig& cfg);

/// Throws ConfigError when the data geometry or class count does not fit.
void check_compatible(const ModelConfig& model_cfg, const ImageSet& data);

// -------------------------------------------------------- attention

/// Writes, per image, one 8-bit grayscale PNG per head plus a head-mean map
/// (min-max normalized to [0, 255], upsampled to the image size). Returns the
/// paths written.
std::vector<std::filesystem::path> export_attention(Encoder& encoder, const ModelConfig& model_cfg,
                                                    const ImageBatch& images,
                                                    const std::filesystem::path& out_dir);

}  // namespace sdmae
