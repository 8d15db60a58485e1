/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sdmae/distillation.hpp"
#include "sdmae/nn.hpp"
#include "sdmae/patching.hpp"
#include "sdmae/tensor.hpp"

namespace sdmae {

enum class PosEmbedKind { kSinCos, kLearned };

std::string to_string(PosEmbedKind k);
PosEmbedKind parse_pos_embed(const std::string& s);

/// Defaults describe a ViT-S encoder (12 x 384, 6 heads) with a 4 x 192
/// decoder on 224px RGB images split into 16px patches.
struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t encoder_depth = 12;
  std::size_t encoder_width = 384;
  std::size_t encoder_heads = 6;
  std::size_t decoder_depth = 4;
  std::size_t decoder_width = 192;
  std::size_t decoder_heads = 3;
  std::size_t mlp_ratio = 4;
  PosEmbedKind pos_embed = PosEmbedKind::kSinCos;
  HeadConfig head;
  std::uint64_t init_seed = 0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;
};

/// Fixed 2-D sin-cos table of shape (N + 1, width); row 0 is the class-token
/// slot and is all zeros. Within a row, the first half encodes the patch
/// column and the second half the patch row. Requires width % 4 == 0.
Tensor sincos_position_table(std::size_t num_patches, std::size_t width);

/// Parameters in the encoder (patch projection, class token, blocks, final
/// norm, and a learned position table when configured).
std::size_t encoder_parameter_count(const ModelConfig& cfg);

/// Patch projection, class token, transformer stack over visible tokens only.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, nn::Rng& rng);

  /// Z_v = Proj(x_v) + E_pos[v]; rows ordered (image, visible slot), (B*V, width).
  Tensor embed_visible(const PatchSequence& seq, const MaskPlan& plan);

  /// Runs [cls; Z_v] through the blocks and final norm. Returns the per-patch
  /// rows F_v (B*V, width); the class-token row is kept in class_features().
  /// Throws NumericError naming the block when a non-finite value appears.
  Tensor encode(const Tensor& z_v, std::size_t batch, std::size_t visible);

  /// Backward through encode. `d_cls` (B, width) may be null.
  Tensor backward_encode(const Tensor& d_f_v, const Tensor* d_cls = nullptr);
  /// Backward through embed_visible (patch projection, position table).
  void backward_embed(const Tensor& d_z_v);

  /// Class-token output rows of the last encode, (B, width).
  const Tensor& class_features() const { return cls_out_; }
  /// Sequence length of the last encode, V + 1.
  std::size_t last_sequence_length() const { return seq_len_; }

  std::size_t depth() const { return blocks_.size(); }
  std::size_t width() const { return width_; }
  nn::Linear& patch_embed() { return patch_embed_; }
  nn::Param& class_token() { return cls_token_; }
  nn::Block& block(std::size_t i) { return blocks_.at(i); }
  const nn::Block& block(std::size_t i) const { return blocks_.at(i); }
  /// Position table currently in use, (N + 1, width).
  const Tensor& position_table() const;

  void collect(nn::ParamRefs& out);

 private:
  std::size_t width_ = 0;
  bool learned_pos_ = false;
  nn::Linear patch_embed_;
  nn::Param cls_token_;
  nn::Param pos_embed_;  // learned table, (N + 1, width)
  Tensor fixed_pos_;
  std::vector<nn::Block> blocks_;
  nn::LayerNorm norm_;

  std::vector<std::vector<std::size_t>> visible_;
  std::size_t batch_ = 0;
  std::size_t seq_len_ = 0;
  Tensor cls_out_;
};

/// Decoder output for a full patch grid.
struct DecoderOutput {
  Tensor features;  // (B*N, decoder width), after the decoder's final norm
  Tensor pixels;    // (B*N, D), after the pixel projection
};

/// Splits rows of a (B*N, cols) tensor into (masked, visible) by plan order.
struct SplitRows {
  Tensor masked;   // (B*M, cols)
  Tensor visible;  // (B*V, cols)
};
SplitRows split_by_plan(const Tensor& full, const MaskPlan& plan);
/// Inverse of split_by_plan: writes masked/visible rows back to grid positions.
Tensor merge_by_plan(const Tensor& masked, const Tensor& visible, const MaskPlan& plan);

class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& cfg, nn::Rng& rng);

  /// Embeds F_v to decoder width, scatters it into the grid with the shared
  /// mask token in masked slots, adds positions, runs the blocks.
  DecoderOutput forward(const Tensor& f_v, const MaskPlan& plan);
  /// Either gradient may be empty. Returns d F_v.
  Tensor backward(const Tensor& d_features, const Tensor& d_pixels);

  /// Decoder input after the position add, (B*N, decoder width).
  const Tensor& last_input() const { return input_; }
  const Tensor& position_table() const { return pos_; }
  nn::Param& mask_token() { return mask_token_; }
  nn::Linear& embed() { return embed_; }
  nn::Linear& pixel_head() { return pred_; }
  std::size_t width() const { return width_; }

  void collect(nn::ParamRefs& out);

 private:
  std::size_t width_ = 0;
  std::size_t num_patches_ = 0;
  nn::Linear embed_;
  nn::Param mask_token_;
  Tensor pos_;  // (N + 1, width), row 0 unused
  std::vector<nn::Block> blocks_;
  nn::LayerNorm norm_;
  nn::Linear pred_;

  MaskPlan plan_;
  Tensor input_;
};

/// Last-layer class-token attention over patches, (B, heads, grid, grid).
/// The class token's weight on itself is dropped and each map renormalized
/// to sum to 1.
Tensor attention_maps(Encoder& encoder, const ImageBatch& images, std::size_t patch_size);

}  // namespace sdmae
