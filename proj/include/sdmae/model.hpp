/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <optional>

#include "sdmae/backbone.hpp"
#include "sdmae/distillation.hpp"
#include "sdmae/objectives.hpp"
#include "sdmae/patching.hpp"

namespace sdmae {

/// Everything a forward produced that a loss or a test may want to inspect.
struct LatentBundle {
  Tensor z_v;          // (B*V, encoder width)
  Tensor f_v;          // (B*V, encoder width)
  DecoderOutput decoded;
  Tensor y_masked;     // (B*M, D)
  Tensor y_visible;    // (B*V, D)
  Tensor target_masked;
  Tensor target_visible;
  Tensor feature_prediction;  // adapter output, feature-MSE mode
  Tensor feature_target;      // detached F_v, feature-MSE mode
  DistributionPair dist;      // sd_mae mode
};

/// Values the backward treats as constants. Passing a saved copy back into
/// forward() pins them, which is how finite differences see the same
/// function the analytic gradient differentiates.
struct DetachedTargets {
  Tensor teacher_probs;
  Tensor feature_target;
};

/// Encoder + decoder + whichever heads the loss mode needs.
class PretrainModel {
 public:
  PretrainModel(const ModelConfig& cfg, const LossWeights& weights);

  LossReport forward(const PatchSequence& seq, const MaskPlan& plan,
                     const DetachedTargets* pinned = nullptr);
  /// Accumulates parameter gradients for the last forward's total loss.
  void backward();
  void zero_grad();

  nn::ParamRefs params();
  const LatentBundle& latents() const { return latents_; }
  DetachedTargets detached() const;

  const ModelConfig& config() const { return cfg_; }
  const LossWeights& weights() const { return weights_; }
  void set_weights(const LossWeights& w);

  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }
  bool has_heads() const { return student_.has_value(); }
  ProjectionHead& student() { return *student_; }
  ProjectionHead& teacher() { return *teacher_; }
  bool has_adapter() const { return adapter_.has_value(); }
  nn::Linear& adapter() { return *adapter_; }

 private:
  ModelConfig cfg_;
  LossWeights weights_;
  Encoder encoder_;
  Decoder decoder_;
  std::optional<ProjectionHead> student_;
  std::optional<ProjectionHead> teacher_;
  std::optional<nn::Linear> adapter_;

  MaskPlan plan_;
  LatentBundle latents_;
  bool pinned_teacher_ = false;
};

}  // namespace sdmae
