/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "sdmae/nn.hpp"
#include "sdmae/tensor.hpp"

namespace sdmae {

/// Linear warm-up 0 -> base_lr over `warmup_steps`, then half-cosine to 0 at
/// `total_steps`.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
             double base_lr);

/// Adam with decoupled weight decay. Moments are keyed by parameter name so
/// they can be checkpointed alongside the model arrays.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;
    double weight_decay = 0.05;
  };

  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamW() = default;
  explicit AdamW(Options opts) : opts_(opts) {}

  /// One update of every trainable parameter in `params` at rate `lr`.
  /// Parameters flagged non-trainable are never touched, including decay.
  void step(const nn::ParamRefs& params, double lr);

  std::uint64_t steps_taken() const { return t_; }
  void set_steps_taken(std::uint64_t t) { t_ = t; }
  const Options& options() const { return opts_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  Options opts_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace sdmae
