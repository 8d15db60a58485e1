/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/distillation.hpp"

#include <cmath>

#include "sdmae/error.hpp"
#include "sdmae/kernels.hpp"

namespace sdmae {

void HeadConfig::validate() const {
  if (hidden_dim == 0 || bottleneck_dim == 0 || output_dim == 0) {
    throw ConfigError("head dimensions must be positive");
  }
  if (!(teacher_temperature > 0.0 && teacher_temperature <= student_temperature)) {
    throw ConfigError("head temperatures must satisfy 0 < teacher <= student (got teacher " +
                      std::to_string(teacher_temperature) + ", student " +
                      std::to_string(student_temperature) + ")");
  }
}

ProjectionHead::ProjectionHead(const std::string& name, std::size_t in_dim,
                               const HeadConfig& cfg, double temperature, nn::Rng& rng)
    : fc1_(name + ".mlp.0", in_dim, cfg.hidden_dim, rng),
      fc2_(name + ".mlp.1", cfg.hidden_dim, cfg.hidden_dim, rng),
      fc3_(name + ".mlp.2", cfg.hidden_dim, cfg.bottleneck_dim, rng),
      last_(name + ".last_layer.weight", {cfg.output_dim, cfg.bottleneck_dim}),
      temperature_(temperature) {
  nn::trunc_normal(last_.value, 0.02, rng);
}

Tensor ProjectionHead::forward(const Tensor& x) {
  pre1_ = fc1_.forward(x);
  Tensor a1(pre1_.shape());
  kernels::gelu_forward(pre1_.span(), a1.span());
  pre2_ = fc2_.forward(a1);
  Tensor a2(pre2_.shape());
  kernels::gelu_forward(pre2_.span(), a2.span());
  z_ = fc3_.forward(a2);

  const std::size_t rows = z_.rows(), bn = z_.cols(), k = last_.value.dim(0);
  unit_ = Tensor::matrix(rows, bn);
  z_norm_.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double v : z_.row(r)) s += v * v;
    z_norm_[r] = std::sqrt(s);
    const double inv = 1.0 / std::max(z_norm_[r], kL2NormEpsilon);
    for (std::size_t j = 0; j < bn; ++j) unit_.at(r, j) = z_.at(r, j) * inv;
  }

  row_norm_ = Tensor({k});
  w_hat_ = Tensor::matrix(k, bn);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (double v : last_.value.row(i)) s += v * v;
    row_norm_[i] = std::sqrt(s);
    for (std::size_t j = 0; j < bn; ++j) w_hat_.at(i, j) = last_.value.at(i, j) / row_norm_[i];
  }

  logits_ = Tensor::matrix(rows, k);
  kernels::gemm_nt(unit_.span(), w_hat_.span(), logits_.span(), {rows, k, bn}, false);
  probs_ = logits_;
  kernels::softmax_rows(probs_.span(), rows, k, 1.0 / temperature_);
  return probs_;
}

Tensor ProjectionHead::backward(const Tensor& d_probs) {
  const std::size_t rows = probs_.rows(), k = probs_.cols(), bn = unit_.cols();
  if (d_probs.rows() != rows || d_probs.cols() != k) {
    throw DimensionError("projection head: gradient shape " + shape_string(d_probs.shape()));
  }
  // Softmax of logits / tau.
  Tensor dlogits = Tensor::matrix(rows, k);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += probs_.at(r, j) * d_probs.at(r, j);
    for (std::size_t j = 0; j < k; ++j)
      dlogits.at(r, j) = probs_.at(r, j) * (d_probs.at(r, j) - dot) / temperature_;
  }

  if (last_.trainable) {
    Tensor dw_hat = Tensor::matrix(k, bn);
    kernels::gemm_tn(dlogits.span(), unit_.span(), dw_hat.span(), {k, bn, rows}, false);
    for (std::size_t i = 0; i < k; ++i) {
      double proj = 0.0;
      for (std::size_t j = 0; j < bn; ++j) proj += dw_hat.at(i, j) * w_hat_.at(i, j);
      for (std::size_t j = 0; j < bn; ++j)
        last_.grad.at(i, j) += (dw_hat.at(i, j) - proj * w_hat_.at(i, j)) / row_norm_[i];
    }
  }
  Tensor du = Tensor::matrix(rows, bn);
  kernels::gemm_nn(dlogits.span(), w_hat_.span(), du.span(), {rows, bn, k}, false);

  Tensor dz = Tensor::matrix(rows, bn);
  for (std::size_t r = 0; r < rows; ++r) {
    if (z_norm_[r] > kL2NormEpsilon) {
      double dot = 0.0;
      for (std::size_t j = 0; j < bn; ++j) dot += unit_.at(r, j) * du.at(r, j);
      for (std::size_t j = 0; j < bn; ++j)
        dz.at(r, j) = (du.at(r, j) - dot * unit_.at(r, j)) / z_norm_[r];
    } else {
      for (std::size_t j = 0; j < bn; ++j) dz.at(r, j) = du.at(r, j) / kL2NormEpsilon;
    }
  }

  Tensor da2 = fc3_.backward(dz);
  Tensor dpre2(pre2_.shape());
  kernels::gelu_backward(pre2_.span(), da2.span(), dpre2.span());
  Tensor da1 = fc2_.backward(dpre2);
  Tensor dpre1(pre1_.shape());
  kernels::gelu_backward(pre1_.span(), da1.span(), dpre1.span());
  return fc1_.backward(dpre1);
}

void ProjectionHead::collect(nn::ParamRefs& out) {
  fc1_.collect(out);
  fc2_.collect(out);
  fc3_.collect(out);
  out.push_back(&last_);
}

void ProjectionHead::set_trainable(bool trainable) {
  nn::ParamRefs refs;
  collect(refs);
  for (nn::Param* p : refs) p->trainable = trainable;
}

Tensor student_head(ProjectionHead& head, const Tensor& features) { return head.forward(features); }

Tensor teacher_head(ProjectionHead& head, const Tensor& features) { return head.forward(features); }

double mean_entropy(const Tensor& p) {
  const std::size_t rows = p.rows();
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (double v : p.row(r))
      if (v > 0.0) total -= v * std::log(v);
  }
  return total / static_cast<double>(rows);
}

std::string to_string(StudentSource s) {
  return s == StudentSource::kEncoded ? "encoded" : "projected";
}

std::string to_string(TeacherSource s) {
  return s == TeacherSource::kPreProjection ? "pre_projection" : "post_projection";
}

StudentSource parse_student_source(const std::string& s) {
  if (s == "encoded") return StudentSource::kEncoded;
  if (s == "projected") return StudentSource::kProjected;
  throw ConfigError("unknown student source '" + s + "' (expected encoded|projected)");
}

TeacherSource parse_teacher_source(const std::string& s) {
  if (s == "pre_projection") return TeacherSource::kPreProjection;
  if (s == "post_projection") return TeacherSource::kPostProjection;
  throw ConfigError("unknown teacher source '" + s +
                    "' (expected pre_projection|post_projection)");
}

}  // namespace sdmae
