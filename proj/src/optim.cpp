/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/optim.hpp"

#include <cmath>
#include <numbers>

#include "sdmae/error.hpp"

namespace sdmae {

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
             double base_lr) {
  if (step > total_steps) {
    throw ParameterError("lr_at: step " + std::to_string(step) + " beyond total " +
                         std::to_string(total_steps));
  }
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const nn::ParamRefs& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (nn::Param* p : params) {
    if (!p->trainable) continue;
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& mo = it->second;
    if (inserted || mo.m.size() != p->value.size()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
    }
    const double decay = p->decay ? opts_.weight_decay : 0.0;
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* m = mo.m.data();
    double* v = mo.v.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.epsilon);
      w[i] -= lr * (update + decay * w[i]);
    }
  }
}

}  // namespace sdmae
