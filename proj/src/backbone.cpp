/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sdmae/error.hpp"

namespace sdmae {

std::string to_string(PosEmbedKind k) { return k == PosEmbedKind::kSinCos ? "sincos" : "learned"; }

PosEmbedKind parse_pos_embed(const std::string& s) {
  if (s == "sincos") return PosEmbedKind::kSinCos;
  if (s == "learned") return PosEmbedKind::kLearned;
  throw ConfigError("unknown pos_embed '" + s + "' (expected sincos|learned)");
}

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || channels == 0) {
    throw ConfigError("image_size, patch_size and channels must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (encoder_width == 0 || encoder_heads == 0 || encoder_width % encoder_heads != 0) {
    throw ConfigError("encoder_width must be a positive multiple of encoder_heads");
  }
  if (decoder_width == 0 || decoder_heads == 0 || decoder_width % decoder_heads != 0) {
    throw ConfigError("decoder_width must be a positive multiple of decoder_heads");
  }
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (decoder_width % 4 != 0) throw ConfigError("decoder_width must be a multiple of 4");
  if (pos_embed == PosEmbedKind::kSinCos && encoder_width % 4 != 0) {
    throw ConfigError("sincos position tables need encoder_width divisible by 4");
  }
  head.validate();
}

Tensor sincos_position_table(std::size_t num_patches, std::size_t width) {
  if (width % 4 != 0) throw ConfigError("sincos table width must be a multiple of 4");
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(double(num_patches))));
  if (grid * grid != num_patches) throw DimensionError("sincos table needs a square patch grid");
  Tensor table = Tensor::matrix(num_patches + 1, width);
  const std::size_t quarter = width / 4;
  for (std::size_t n = 0; n < num_patches; ++n) {
    const double coords[2] = {double(n % grid), double(n / grid)};
    double* row = table.data() + (n + 1) * width;
    for (std::size_t half = 0; half < 2; ++half) {
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, double(i) / double(quarter));
        row[half * 2 * quarter + i] = std::sin(coords[half] * omega);
        row[half * 2 * quarter + quarter + i] = std::cos(coords[half] * omega);
      }
    }
  }
  return table;
}

std::size_t encoder_parameter_count(const ModelConfig& cfg) {
  const std::size_t w = cfg.encoder_width, h = cfg.mlp_ratio * w;
  std::size_t n = cfg.patch_dim() * w + w + w;
  if (cfg.pos_embed == PosEmbedKind::kLearned) n += (cfg.num_patches() + 1) * w;
  const std::size_t block = 4 * w + (3 * w * w + 3 * w) + (w * w + w) + (w * h + h) + (h * w + w);
  n += cfg.encoder_depth * block;
  if (cfg.encoder_depth > 0) n += 2 * w;
  return n;
}

// --------------------------------------------------------------- Encoder

Encoder::Encoder(const ModelConfig& cfg, nn::Rng& rng)
    : width_(cfg.encoder_width),
      learned_pos_(cfg.pos_embed == PosEmbedKind::kLearned),
      patch_embed_("encoder.patch_embed", cfg.patch_dim(), cfg.encoder_width, rng),
      cls_token_("encoder.cls_token", {cfg.encoder_width}, false),
      norm_("encoder.norm", cfg.encoder_width) {
  // Patch embedding: xavier-uniform, as the MAE reference does for its patch projection.
  const double bound = std::sqrt(6.0 / double(cfg.patch_dim() + cfg.encoder_width));
  std::uniform_real_distribution<double> xavier(-bound, bound);
  for (double& v : patch_embed_.weight().value.values()) v = xavier(rng);
  nn::trunc_normal(cls_token_.value, 0.02, rng);
  if (learned_pos_) {
    pos_embed_ = nn::Param("encoder.pos_embed", {cfg.num_patches() + 1, width_}, false);
    nn::trunc_normal(pos_embed_.value, 0.02, rng);
  } else {
    fixed_pos_ = sincos_position_table(cfg.num_patches(), width_);
  }
  blocks_.reserve(cfg.encoder_depth);
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i) {
    blocks_.emplace_back("encoder.blocks." + std::to_string(i), width_, cfg.encoder_heads,
                         cfg.mlp_ratio * width_, rng);
  }
}

const Tensor& Encoder::position_table() const {
  return learned_pos_ ? pos_embed_.value : fixed_pos_;
}

Tensor Encoder::embed_visible(const PatchSequence& seq, const MaskPlan& plan) {
  check_plan(seq, plan);
  if (seq.patch_dim() != patch_embed_.in_features()) {
    throw DimensionError("patch dim " + std::to_string(seq.patch_dim()) +
                         " does not match encoder input " +
                         std::to_string(patch_embed_.in_features()));
  }
  const Tensor& pos = position_table();
  if (seq.num_patches() + 1 != pos.rows()) {
    throw DimensionError("sequence has " + std::to_string(seq.num_patches()) +
                         " patches but the position table covers " +
                         std::to_string(pos.rows() - 1));
  }
  const std::size_t b = seq.batch(), v = plan.num_visible();
  visible_ = plan.visible;
  Tensor x_v = gather_patches(seq, plan.visible).reshaped({b * v, seq.patch_dim()});
  Tensor z = patch_embed_.forward(x_v);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t j = 0; j < v; ++j) {
      const double* p = pos.data() + (plan.visible[bi][j] + 1) * width_;
      double* zr = z.data() + (bi * v + j) * width_;
      for (std::size_t c = 0; c < width_; ++c) zr[c] += p[c];
    }
  return z;
}

Tensor Encoder::encode(const Tensor& z_v, std::size_t batch, std::size_t visible) {
  if (z_v.cols() != width_ || z_v.rows() != batch * visible) {
    throw DimensionError("encode: tokens " + shape_string(z_v.shape()) + " vs batch " +
                         std::to_string(batch) + " x visible " + std::to_string(visible) +
                         " x width " + std::to_string(width_));
  }
  batch_ = batch;
  seq_len_ = visible + 1;
  const Tensor& pos = position_table();
  Tensor x = Tensor::matrix(batch * seq_len_, width_);
  for (std::size_t b = 0; b < batch; ++b) {
    double* cls = x.data() + b * seq_len_ * width_;
    for (std::size_t c = 0; c < width_; ++c) cls[c] = cls_token_.value[c] + pos[c];
    std::copy_n(z_v.data() + b * visible * width_, visible * width_, cls + width_);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, batch, seq_len_);
    if (!x.all_finite()) {
      throw NumericError("encoder block " + std::to_string(i) + " produced non-finite values");
    }
  }
  if (!blocks_.empty()) x = norm_.forward(x);

  cls_out_ = Tensor::matrix(batch, width_);
  Tensor f_v = Tensor::matrix(batch * visible, width_);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.data() + b * seq_len_ * width_;
    std::copy_n(src, width_, cls_out_.data() + b * width_);
    std::copy_n(src + width_, visible * width_, f_v.data() + b * visible * width_);
  }
  return f_v;
}

Tensor Encoder::backward_encode(const Tensor& d_f_v, const Tensor* d_cls) {
  const std::size_t visible = seq_len_ - 1;
  Tensor dx = Tensor::matrix(batch_ * seq_len_, width_);
  for (std::size_t b = 0; b < batch_; ++b) {
    double* dst = dx.data() + b * seq_len_ * width_;
    if (d_cls) std::copy_n(d_cls->data() + b * width_, width_, dst);
    std::copy_n(d_f_v.data() + b * visible * width_, visible * width_, dst + width_);
  }
  if (!blocks_.empty()) dx = norm_.backward(dx);
  for (std::size_t i = blocks_.size(); i-- > 0;) dx = blocks_[i].backward(dx);

  Tensor d_z = Tensor::matrix(batch_ * visible, width_);
  for (std::size_t b = 0; b < batch_; ++b) {
    const double* src = dx.data() + b * seq_len_ * width_;
    for (std::size_t c = 0; c < width_; ++c) {
      cls_token_.grad[c] += src[c];
      if (learned_pos_) pos_embed_.grad[c] += src[c];
    }
    std::copy_n(src + width_, visible * width_, d_z.data() + b * visible * width_);
  }
  return d_z;
}

void Encoder::backward_embed(const Tensor& d_z_v) {
  if (learned_pos_) {
    const std::size_t v = visible_.empty() ? 0 : visible_.front().size();
    for (std::size_t b = 0; b < visible_.size(); ++b)
      for (std::size_t j = 0; j < v; ++j) {
        double* g = pos_embed_.grad.data() + (visible_[b][j] + 1) * width_;
        const double* d = d_z_v.data() + (b * v + j) * width_;
        for (std::size_t c = 0; c < width_; ++c) g[c] += d[c];
      }
  }
  patch_embed_.backward(d_z_v);
}

void Encoder::collect(nn::ParamRefs& out) {
  patch_embed_.collect(out);
  out.push_back(&cls_token_);
  if (learned_pos_) out.push_back(&pos_embed_);
  for (auto& b : blocks_) b.collect(out);
  if (!blocks_.empty()) norm_.collect(out);
}

// ---------------------------------------------------------- plan helpers

SplitRows split_by_plan(const Tensor& full, const MaskPlan& plan) {
  const std::size_t n = plan.num_patches, cols = full.cols();
  if (full.rows() != plan.batch() * n) throw DimensionError("split_by_plan: row count mismatch");
  SplitRows out{Tensor::matrix(plan.batch() * plan.num_masked(), cols),
                Tensor::matrix(plan.batch() * plan.num_visible(), cols)};
  for (std::size_t b = 0; b < plan.batch(); ++b) {
    for (std::size_t j = 0; j < plan.num_masked(); ++j)
      std::copy_n(full.data() + (b * n + plan.masked[b][j]) * cols, cols,
                  out.masked.data() + (b * plan.num_masked() + j) * cols);
    for (std::size_t j = 0; j < plan.num_visible(); ++j)
      std::copy_n(full.data() + (b * n + plan.visible[b][j]) * cols, cols,
                  out.visible.data() + (b * plan.num_visible() + j) * cols);
  }
  return out;
}

Tensor merge_by_plan(const Tensor& masked, const Tensor& visible, const MaskPlan& plan) {
  const std::size_t n = plan.num_patches;
  const std::size_t cols = std::max(masked.cols(), visible.cols());
  Tensor full = Tensor::matrix(plan.batch() * n, cols);
  for (std::size_t b = 0; b < plan.batch(); ++b) {
    for (std::size_t j = 0; j < plan.num_masked(); ++j)
      std::copy_n(masked.data() + (b * plan.num_masked() + j) * cols, cols,
                  full.data() + (b * n + plan.masked[b][j]) * cols);
    for (std::size_t j = 0; j < plan.num_visible(); ++j)
      std::copy_n(visible.data() + (b * plan.num_visible() + j) * cols, cols,
                  full.data() + (b * n + plan.visible[b][j]) * cols);
  }
  return full;
}

// --------------------------------------------------------------- Decoder

Decoder::Decoder(const ModelConfig& cfg, nn::Rng& rng)
    : width_(cfg.decoder_width),
      num_patches_(cfg.num_patches()),
      embed_("decoder.embed", cfg.encoder_width, cfg.decoder_width, rng),
      mask_token_("decoder.mask_token", {cfg.decoder_width}, false),
      pos_(sincos_position_table(cfg.num_patches(), cfg.decoder_width)),
      norm_("decoder.norm", cfg.decoder_width) {
  nn::trunc_normal(mask_token_.value, 0.02, rng);
  blocks_.reserve(cfg.decoder_depth);
  for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
    blocks_.emplace_back("decoder.blocks." + std::to_string(i), width_, cfg.decoder_heads,
                         cfg.mlp_ratio * width_, rng);
  }
  pred_ = nn::Linear("decoder.pred", width_, cfg.patch_dim(), rng);
}

DecoderOutput Decoder::forward(const Tensor& f_v, const MaskPlan& plan) {
  const std::size_t b = plan.batch(), v = plan.num_visible(), n = plan.num_patches;
  if (n != num_patches_) throw DimensionError("decoder: plan covers a different patch grid");
  if (f_v.rows() != b * v) {
    throw DimensionError("decoder: " + std::to_string(f_v.rows()) + " feature rows but plan has " +
                         std::to_string(b) + " x " + std::to_string(v) + " visible");
  }
  plan_ = plan;
  Tensor e = embed_.forward(f_v);
  Tensor visible_rows = std::move(e);
  Tensor masked_rows = Tensor::matrix(b * plan.num_masked(), width_);
  for (std::size_t r = 0; r < masked_rows.rows(); ++r)
    std::copy_n(mask_token_.value.data(), width_, masked_rows.data() + r * width_);
  input_ = merge_by_plan(masked_rows, visible_rows, plan);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t i = 0; i < n; ++i) {
      double* row = input_.data() + (bi * n + i) * width_;
      const double* p = pos_.data() + (i + 1) * width_;
      for (std::size_t c = 0; c < width_; ++c) row[c] += p[c];
    }

  Tensor x = input_;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, b, n);
    if (!x.all_finite()) {
      throw NumericError("decoder block " + std::to_string(i) + " produced non-finite values");
    }
  }
  DecoderOutput out;
  out.features = norm_.forward(x);
  out.pixels = pred_.forward(out.features);
  return out;
}

Tensor Decoder::backward(const Tensor& d_features, const Tensor& d_pixels) {
  const std::size_t rows = plan_.batch() * num_patches_;
  Tensor d = d_features.empty() ? Tensor::matrix(rows, width_) : d_features;
  if (!d_pixels.empty()) nn::add_inplace(d, pred_.backward(d_pixels));
  d = norm_.backward(d);
  for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d);

  SplitRows parts = split_by_plan(d, plan_);
  for (std::size_t r = 0; r < parts.masked.rows(); ++r)
    for (std::size_t c = 0; c < width_; ++c) mask_token_.grad[c] += parts.masked.at(r, c);
  return embed_.backward(parts.visible);
}

void Decoder::collect(nn::ParamRefs& out) {
  embed_.collect(out);
  out.push_back(&mask_token_);
  for (auto& b : blocks_) b.collect(out);
  norm_.collect(out);
  pred_.collect(out);
}

// ----------------------------------------------------------- attention map

Tensor attention_maps(Encoder& encoder, const ImageBatch& images, std::size_t patch_size) {
  if (encoder.depth() == 0) throw ParameterError("attention maps need at least one encoder block");
  PatchSequence seq = patchify(images, patch_size);
  const std::size_t b = seq.batch(), n = seq.num_patches(), g = seq.grid();
  MaskPlan plan = full_plan(b, n);
  encoder.encode(encoder.embed_visible(seq, plan), b, n);
  const nn::Attention& attn = encoder.block(encoder.depth() - 1).attention();
  const std::size_t h = attn.heads(), l = n + 1;
  const auto& probs = attn.probs();
  Tensor maps({b, h, g, g});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t hd = 0; hd < h; ++hd) {
      const double* row = probs.data() + ((bi * h + hd) * l) * l;  // query = class token
      double total = 0.0;
      for (std::size_t j = 1; j < l; ++j) total += row[j];
      double* out = maps.data() + (bi * h + hd) * n;
      for (std::size_t j = 1; j < l; ++j) out[j - 1] = row[j] / total;
    }
  return maps;
}

}  // namespace sdmae
