/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "sdmae/tensor.hpp"

// Layers with explicit forward/backward. Each forward caches what its
// backward needs, so a layer instance serves one forward per backward.
// Activations are matrices of shape (rows, width) where rows = batch * seq.

namespace sdmae::nn {

using Rng = std::mt19937_64;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  /// Decoupled weight decay applies (off for biases, norms, tokens).
  bool decay = true;

  Param() = default;
  Param(std::string n, Shape shape, bool decay_flag = true)
      : name(std::move(n)), value(shape), grad(shape), decay(decay_flag) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParamRefs = std::vector<Param*>;

/// Truncated normal N(0, sigma^2) clipped to +-2 sigma by resampling.
void trunc_normal(Tensor& t, double sigma, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);

  std::size_t in_features() const { return weight_.value.dim(1); }
  std::size_t out_features() const { return weight_.value.dim(0); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  bool has_bias() const { return has_bias_; }

 private:
  Param weight_;  // (out, in)
  Param bias_;    // (out)
  bool has_bias_ = true;
  Tensor x_;
};

class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-6;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);

 private:
  Param gamma_;
  Param beta_;
  Tensor xhat_;
  std::vector<double> rstd_;
};

/// Multi-head self-attention over `batch` independent sequences of length `seq`.
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, std::size_t width, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x, std::size_t batch, std::size_t seq);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);

  std::size_t heads() const { return heads_; }
  Linear& qkv() { return qkv_; }
  Linear& proj() { return proj_; }
  /// Softmax weights of the last forward, layout (batch, heads, seq, seq).
  const std::vector<double>& probs() const { return probs_; }

 private:
  Linear qkv_;
  Linear proj_;
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  std::size_t batch_ = 0;
  std::size_t seq_ = 0;
  Tensor qkv_out_;
  std::vector<double> probs_;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
  Tensor pre_act_;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then + Mlp(LN(.)).
class Block {
 public:
  Block() = default;
  Block(const std::string& name, std::size_t width, std::size_t heads, std::size_t mlp_hidden,
        Rng& rng);

  Tensor forward(const Tensor& x, std::size_t batch, std::size_t seq);
  Tensor backward(const Tensor& dy);
  void collect(ParamRefs& out);

  Attention& attention() { return attn_; }
  const Attention& attention() const { return attn_; }
  Mlp& mlp() { return mlp_; }

 private:
  LayerNorm ln1_;
  Attention attn_;
  LayerNorm ln2_;
  Mlp mlp_;
};

/// Elementwise a += b; shapes must match.
void add_inplace(Tensor& a, const Tensor& b);

}  // namespace sdmae::nn
