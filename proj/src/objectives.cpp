/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/objectives.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "sdmae/error.hpp"

namespace sdmae {

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::kMae: return "mae";
    case LossMode::kDecoupledPixel: return "decoupled_pixel";
    case LossMode::kDecoupledFeatureMse: return "decoupled_feature_mse";
    case LossMode::kSdMae: return "sd_mae";
  }
  return "?";
}

LossMode parse_loss_mode(std::string_view name) {
  if (name == "mae") return LossMode::kMae;
  if (name == "decoupled_pixel") return LossMode::kDecoupledPixel;
  if (name == "decoupled_feature_mse") return LossMode::kDecoupledFeatureMse;
  if (name == "sd_mae") return LossMode::kSdMae;
  throw ConfigError("unknown loss mode '" + std::string(name) +
                    "' (expected mae|decoupled_pixel|decoupled_feature_mse|sd_mae)");
}

const std::vector<LadderRow>& ablation_ladder() {
  static const std::vector<LadderRow> rows = {
      {"mae", "pixel/mse/1", "-", {0.0, 0.0, LossMode::kMae}},
      {"decoupled_pixel(a=0.5)", "pixel/mse/0.5", "pixel/mse/0.5", {0.5, 0.0, LossMode::kDecoupledPixel}},
      {"decoupled_pixel(a=0.2)", "pixel/mse/0.8", "pixel/mse/0.2", {0.2, 0.0, LossMode::kDecoupledPixel}},
      {"decoupled_feature_mse(a=0.2)", "pixel/mse/0.8", "feature/mse/0.2",
       {0.2, 0.0, LossMode::kDecoupledFeatureMse}},
      {"sd_mae(b=0.2)", "pixel/mse/0.8", "feature/sd/0.2", {0.0, 0.2, LossMode::kSdMae}},
  };
  return rows;
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
}

double LossWeights::masked_weight() const {
  switch (mode) {
    case LossMode::kMae: return 1.0;
    case LossMode::kDecoupledPixel:
    case LossMode::kDecoupledFeatureMse: return 1.0 - alpha;
    case LossMode::kSdMae: return 1.0 - beta;
  }
  return 1.0;
}

double combine(const LossWeights& w, const LossReport& parts) {
  switch (w.mode) {
    case LossMode::kMae: return parts.recon_masked;
    case LossMode::kDecoupledPixel:
    case LossMode::kDecoupledFeatureMse:
      return (1.0 - w.alpha) * parts.recon_masked + w.alpha * parts.recon_visible;
    case LossMode::kSdMae: return loss_total(parts.recon_masked, parts.distill, w.beta);
  }
  return parts.total;
}

double mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.size() != target.size()) {
    throw DimensionError("mse: prediction " + shape_string(prediction.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (prediction.empty()) {
    spdlog::warn("mse over zero elements (degenerate mask plan); returning 0");
    return 0.0;
  }
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(prediction.size());
}

Tensor mse_gradient(const Tensor& prediction, const Tensor& target, double scale) {
  Tensor g(prediction.shape());
  if (prediction.empty()) return g;
  const double k = 2.0 * scale / static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) g[i] = k * (prediction[i] - target[i]);
  return g;
}

double loss_mae(const Tensor& y_masked, const Tensor& targets) { return mse(y_masked, targets); }

double loss_decoupled(const Tensor& y_masked, const Tensor& y_visible,
                      const Tensor& targets_masked, const Tensor& targets_visible, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0, 1]");
  const double masked = mse(y_masked, targets_masked);
  if (alpha == 0.0) return masked;
  return (1.0 - alpha) * masked + alpha * mse(y_visible, targets_visible);
}

double loss_feature_mse(const Tensor& target, const Tensor& prediction) {
  if (target.cols() != prediction.cols()) {
    throw DimensionError("feature mse: target width " + std::to_string(target.cols()) +
                         " vs prediction width " + std::to_string(prediction.cols()) +
                         " (an adapter is required)");
  }
  return mse(prediction, target);
}

void check_row_stochastic(const Tensor& t, const char* what, double tol) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (double v : t.row(r)) {
      if (!(v >= 0.0)) throw NumericError(std::string(what) + " has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw NumericError(std::string(what) + " row " + std::to_string(r) + " sums to " +
                         std::to_string(s));
    }
  }
}

double loss_distill(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) {
    throw DimensionError("distill: p " + shape_string(p.shape()) + " vs q " +
                         shape_string(q.shape()));
  }
  check_row_stochastic(p, "teacher distribution p");
  check_row_stochastic(q, "student distribution q");
  const std::size_t rows = p.rows();
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto pr = p.row(r);
    const auto qr = q.row(r);
    double s = 0.0;
    for (std::size_t k = 0; k < pr.size(); ++k) s -= pr[k] * std::log(std::max(qr[k], kLogClamp));
    total += s;
  }
  return total / static_cast<double>(rows);
}

Tensor distill_gradient_q(const Tensor& p, const Tensor& q, double scale) {
  Tensor g(q.shape());
  const std::size_t rows = q.rows();
  if (rows == 0) return g;
  const double k = scale / static_cast<double>(rows);
  for (std::size_t i = 0; i < q.size(); ++i) g[i] = q[i] > kLogClamp ? -k * p[i] / q[i] : 0.0;
  return g;
}

Tensor distill_gradient_p(const Tensor& p, const Tensor& q, double scale) {
  Tensor g(p.shape());
  const std::size_t rows = p.rows();
  if (rows == 0) return g;
  const double k = scale / static_cast<double>(rows);
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = -k * std::log(std::max(q[i], kLogClamp));
  return g;
}

double loss_total(double recon, double distill, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ParameterError("beta must lie in [0, 1]");
  return (1.0 - beta) * recon + beta * distill;
}

}  // namespace sdmae
