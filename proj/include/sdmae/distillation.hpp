/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <string>

#include "sdmae/nn.hpp"
#include "sdmae/tensor.hpp"

namespace sdmae {

/// Which encoder-side tensor the student head reads.
enum class StudentSource { kEncoded, kProjected };
/// Which decoder-side tensor the teacher head reads.
enum class TeacherSource { kPreProjection, kPostProjection };

struct HeadConfig {
  std::size_t hidden_dim = 4096;
  std::size_t bottleneck_dim = 256;
  std::size_t output_dim = 4096;
  double student_temperature = 0.1;
  double teacher_temperature = 0.04;
  StudentSource student_source = StudentSource::kEncoded;
  TeacherSource teacher_source = TeacherSource::kPreProjection;
  /// Teacher distribution is a constant for the distillation gradient.
  bool stop_gradient = true;

  void validate() const;
};

/// Student/teacher distributions over the visible tokens, each (B*V, K).
struct DistributionPair {
  Tensor q;
  Tensor p;
};

inline constexpr double kL2NormEpsilon = 1e-12;

/// MLP -> L2-normalized bottleneck -> weight-normalized linear -> softmax(./tau).
///
/// The last layer uses unit-norm rows (weight norm with the gain fixed at 1),
/// so logits are cosines in [-1, 1] before the temperature.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(const std::string& name, std::size_t in_dim, const HeadConfig& cfg,
                 double temperature, nn::Rng& rng);

  /// Row-stochastic probabilities (rows, K).
  Tensor forward(const Tensor& x);
  /// Gradient w.r.t. the probabilities of the last forward; returns d input.
  Tensor backward(const Tensor& d_probs);
  void collect(nn::ParamRefs& out);
  void set_trainable(bool trainable);

  double temperature() const { return temperature_; }
  /// Bottleneck before L2 normalization.
  const Tensor& bottleneck_raw() const { return z_; }
  const Tensor& bottleneck() const { return unit_; }
  const Tensor& logits() const { return logits_; }
  nn::Linear& layer(std::size_t i) { return i == 0 ? fc1_ : i == 1 ? fc2_ : fc3_; }
  nn::Param& last_layer() { return last_; }

 private:
  nn::Linear fc1_, fc2_, fc3_;
  nn::Param last_;  // (K, bottleneck), rows normalized on use
  double temperature_ = 1.0;
  Tensor pre1_, pre2_, z_, unit_, row_norm_, w_hat_, logits_, probs_;
  std::vector<double> z_norm_;
};

/// q = softmax over the student head applied to encoder-side features.
Tensor student_head(ProjectionHead& head, const Tensor& features);
/// p = teacher head on decoder-side features; the caller treats p as constant.
Tensor teacher_head(ProjectionHead& head, const Tensor& features);

/// Mean over rows of -sum_k p log p.
double mean_entropy(const Tensor& p);

std::string to_string(StudentSource s);
std::string to_string(TeacherSource s);
StudentSource parse_student_source(const std::string& s);
TeacherSource parse_teacher_source(const std::string& s);

}  // namespace sdmae
