/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sdmae/tensor.hpp"

namespace sdmae {

/// Pretraining objectives, one per ablation row:
///   kMae                 masked-patch pixel MSE only
///   kDecoupledPixel      (1-a) masked MSE + a visible-patch pixel MSE
///   kDecoupledFeatureMse (1-a) masked MSE + a MSE(adapter(decoder visible), sg(F_v))
///   kSdMae               (1-b) masked MSE + b cross-entropy(p_teacher, q_student)
enum class LossMode { kMae, kDecoupledPixel, kDecoupledFeatureMse, kSdMae };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.2;
  LossMode mode = LossMode::kSdMae;

  void validate() const;
  bool uses_visible() const {
    return mode == LossMode::kDecoupledPixel || mode == LossMode::kDecoupledFeatureMse;
  }
  bool uses_distill() const { return mode == LossMode::kSdMae; }
  /// Weight on the masked reconstruction term.
  double masked_weight() const;
  /// Weight on the visible (pixel or feature) term.
  double visible_weight() const { return uses_visible() ? alpha : 0.0; }
  double distill_weight() const { return uses_distill() ? beta : 0.0; }
};

/// One row of the ablation ladder, from plain MAE to SD-MAE.
struct LadderRow {
  std::string label;
  std::string masked_part;   // target/loss/proportion
  std::string visible_part;
  LossWeights weights;
};
/// The five rows in their published order.
const std::vector<LadderRow>& ablation_ladder();

struct LossReport {
  double total = 0.0;
  double recon_masked = 0.0;
  double recon_visible = 0.0;
  double distill = 0.0;
  std::size_t masked_count = 0;
  std::size_t visible_count = 0;
};

/// The combination a mode applies to its components.
double combine(const LossWeights& weights, const LossReport& parts);

inline constexpr double kLogClamp = 1e-12;

/// Element-mean squared error. Returns 0 (with a warning) when empty.
double mse(const Tensor& prediction, const Tensor& target);
/// d(scale * mse)/d prediction.
Tensor mse_gradient(const Tensor& prediction, const Tensor& target, double scale);

double loss_mae(const Tensor& y_masked, const Tensor& targets);
double loss_decoupled(const Tensor& y_masked, const Tensor& y_visible,
                      const Tensor& targets_masked, const Tensor& targets_visible, double alpha);
/// MSE between a detached encoder-feature target and the adapted decoder prediction.
double loss_feature_mse(const Tensor& target, const Tensor& prediction);

/// Mean over rows of -sum_k p_k log(max(q_k, 1e-12)). Throws NumericError
/// when a row of p or q is not a probability vector (tolerance 1e-5).
double loss_distill(const Tensor& p, const Tensor& q);
/// d(scale * loss_distill)/dq.
Tensor distill_gradient_q(const Tensor& p, const Tensor& q, double scale);
/// d(scale * loss_distill)/dp, used only when the teacher is not detached.
Tensor distill_gradient_p(const Tensor& p, const Tensor& q, double scale);

double loss_total(double recon, double distill, double beta);

/// Throws NumericError unless every row is non-negative and sums to 1 +- tol.
void check_row_stochastic(const Tensor& t, const char* what, double tol = 1e-5);

}  // namespace sdmae
