/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/model.hpp"

#include <cmath>

#include "sdmae/error.hpp"

namespace sdmae {
namespace {

Tensor zeros_like_rows(std::size_t rows, std::size_t cols) { return Tensor::matrix(rows, cols); }

}  // namespace

PretrainModel::PretrainModel(const ModelConfig& cfg, const LossWeights& weights)
    : cfg_(cfg), weights_(weights) {
  cfg_.validate();
  weights_.validate();
  // Submodules are built in a fixed order so one seed fixes every array.
  nn::Rng rng(cfg_.init_seed);
  encoder_ = Encoder(cfg_, rng);
  decoder_ = Decoder(cfg_, rng);
  if (weights_.mode == LossMode::kSdMae) {
    const HeadConfig& h = cfg_.head;
    student_.emplace("student_head", cfg_.encoder_width, h, h.student_temperature, rng);
    const std::size_t teacher_in =
        h.teacher_source == TeacherSource::kPreProjection ? cfg_.decoder_width : cfg_.patch_dim();
    teacher_.emplace("teacher_head", teacher_in, h, h.teacher_temperature, rng);
    if (h.stop_gradient) teacher_->set_trainable(false);
  }
  if (weights_.mode == LossMode::kDecoupledFeatureMse) {
    adapter_.emplace("feature_adapter", cfg_.decoder_width, cfg_.encoder_width, rng);
  }
}

void PretrainModel::set_weights(const LossWeights& w) {
  if (w.mode != weights_.mode) {
    throw ConfigError("cannot switch loss mode on a built model (" + to_string(weights_.mode) +
                      " -> " + to_string(w.mode) + ")");
  }
  w.validate();
  weights_ = w;
}

nn::ParamRefs PretrainModel::params() {
  nn::ParamRefs out;
  encoder_.collect(out);
  decoder_.collect(out);
  if (student_) student_->collect(out);
  if (teacher_) teacher_->collect(out);
  if (adapter_) adapter_->collect(out);
  return out;
}

void PretrainModel::zero_grad() {
  for (nn::Param* p : params()) p->zero_grad();
}

DetachedTargets PretrainModel::detached() const {
  return {latents_.dist.p, latents_.feature_target};
}

LossReport PretrainModel::forward(const PatchSequence& seq, const MaskPlan& plan,
                                  const DetachedTargets* pinned) {
  check_plan(seq, plan);
  plan_ = plan;
  const std::size_t b = seq.batch(), v = plan.num_visible(), m = plan.num_masked(),
                    d = seq.patch_dim();
  LatentBundle& L = latents_;
  L = LatentBundle{};
  L.z_v = encoder_.embed_visible(seq, plan);
  L.f_v = encoder_.encode(L.z_v, b, v);
  L.decoded = decoder_.forward(L.f_v, plan);
  SplitRows pix = split_by_plan(L.decoded.pixels, plan);
  L.y_masked = std::move(pix.masked);
  L.y_visible = std::move(pix.visible);
  L.target_masked = normalize_targets(seq, plan).targets.reshaped({b * m, d});

  LossReport report;
  report.masked_count = m;
  report.visible_count = v;
  report.recon_masked = mse(L.y_masked, L.target_masked);

  switch (weights_.mode) {
    case LossMode::kMae: break;
    case LossMode::kDecoupledPixel:
      L.target_visible = normalize_visible_targets(seq, plan).targets.reshaped({b * v, d});
      report.recon_visible = mse(L.y_visible, L.target_visible);
      break;
    case LossMode::kDecoupledFeatureMse: {
      Tensor hv = split_by_plan(L.decoded.features, plan).visible;
      L.feature_prediction = adapter_->forward(hv);
      L.feature_target = pinned ? pinned->feature_target : L.f_v;
      report.recon_visible = loss_feature_mse(L.feature_target, L.feature_prediction);
      break;
    }
    case LossMode::kSdMae: {
      const HeadConfig& h = cfg_.head;
      const Tensor& s_in = h.student_source == StudentSource::kEncoded ? L.f_v : L.z_v;
      L.dist.q = student_head(*student_, s_in);
      pinned_teacher_ = pinned != nullptr;
      if (pinned) {
        L.dist.p = pinned->teacher_probs;
      } else {
        const Tensor& full = h.teacher_source == TeacherSource::kPreProjection
                                 ? L.decoded.features
                                 : L.decoded.pixels;
        L.dist.p = teacher_head(*teacher_, split_by_plan(full, plan).visible);
      }
      report.distill = loss_distill(L.dist.p, L.dist.q);
      break;
    }
  }
  report.total = combine(weights_, report);
  if (!std::isfinite(report.total)) {
    throw NumericError("non-finite pretraining loss (masked " + std::to_string(report.recon_masked) +
                       ", visible " + std::to_string(report.recon_visible) + ", distill " +
                       std::to_string(report.distill) + ")");
  }
  return report;
}

void PretrainModel::backward() {
  const LatentBundle& L = latents_;
  const MaskPlan& plan = plan_;
  const std::size_t b = plan.batch(), v = plan.num_visible(), m = plan.num_masked();
  const std::size_t d = cfg_.patch_dim(), wd = cfg_.decoder_width;

  Tensor dy_m = mse_gradient(L.y_masked, L.target_masked, weights_.masked_weight());
  Tensor dy_v = weights_.mode == LossMode::kDecoupledPixel
                    ? mse_gradient(L.y_visible, L.target_visible, weights_.alpha)
                    : zeros_like_rows(b * v, d);
  Tensor d_pixels = merge_by_plan(dy_m, dy_v, plan);
  Tensor d_features;

  if (weights_.mode == LossMode::kDecoupledFeatureMse) {
    Tensor dpred = mse_gradient(L.feature_prediction, L.feature_target, weights_.alpha);
    Tensor dhv = adapter_->backward(dpred);
    d_features = merge_by_plan(zeros_like_rows(b * m, wd), dhv, plan);
  }

  Tensor d_student;
  if (weights_.mode == LossMode::kSdMae) {
    const HeadConfig& h = cfg_.head;
    d_student = student_->backward(distill_gradient_q(L.dist.p, L.dist.q, weights_.beta));
    if (!h.stop_gradient && !pinned_teacher_) {
      Tensor dt = teacher_->backward(distill_gradient_p(L.dist.p, L.dist.q, weights_.beta));
      if (h.teacher_source == TeacherSource::kPreProjection) {
        d_features = merge_by_plan(zeros_like_rows(b * m, wd), dt, plan);
      } else {
        nn::add_inplace(d_pixels, merge_by_plan(zeros_like_rows(b * m, d), dt, plan));
      }
    }
  }

  Tensor d_f = decoder_.backward(d_features, d_pixels);
  const bool student_on_f = weights_.mode == LossMode::kSdMae &&
                            cfg_.head.student_source == StudentSource::kEncoded;
  if (student_on_f) nn::add_inplace(d_f, d_student);
  Tensor d_z = encoder_.backward_encode(d_f);
  if (weights_.mode == LossMode::kSdMae && !student_on_f) nn::add_inplace(d_z, d_student);
  encoder_.backward_embed(d_z);
}

}  // namespace sdmae
