/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <cmath>

#include "sdmae/error.hpp"
#include "sdmae/objectives.hpp"
#include "support.hpp"

using namespace sdmae;

namespace {

double loop_mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

double loop_ce(const Tensor& p, const Tensor& q) {
  const std::size_t k = p.shape().back(), rows = p.size() / k;
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) s -= p[r * k + j] * std::log(q[r * k + j]);
  return s / double(rows);
}

}  // namespace

TEST_CASE("masked MSE") {
  const Tensor y = test::random_tensor({2, 3, 4}, 1), t = test::random_tensor({2, 3, 4}, 2);
  CHECK(loss_mae(y, y) == 0.0);
  CHECK(loss_mae(Tensor({2, 3, 4}, 1.0), Tensor({2, 3, 4}, 0.0)) == doctest::Approx(1.0));
  CHECK(loss_mae(y, t) == doctest::Approx(loop_mse(y, t)).epsilon(1e-12));
  CHECK(loss_mae(Tensor({2, 0, 4}), Tensor({2, 0, 4})) == 0.0);
  CHECK_THROWS_AS(loss_mae(y, Tensor({2, 3, 5})), DimensionError);
}

TEST_CASE("decoupled pixel loss identities") {
  const Tensor ym = test::random_tensor({2, 3, 4}, 3), tm = test::random_tensor({2, 3, 4}, 4);
  const Tensor yv = test::random_tensor({2, 2, 4}, 5), tv = test::random_tensor({2, 2, 4}, 6);
  CHECK(loss_decoupled(ym, yv, tm, tv, 0.0) == loss_mae(ym, tm));
  CHECK(loss_decoupled(ym, yv, tm, tv, 0.5) ==
        doctest::Approx(0.5 * (loop_mse(ym, tm) + loop_mse(yv, tv))).epsilon(1e-12));
  CHECK(loss_decoupled(ym, tv, tm, tv, 1.0) == 0.0);
  CHECK(loss_decoupled(ym, yv, tm, tv, 0.2) ==
        doctest::Approx(0.8 * loop_mse(ym, tm) + 0.2 * loop_mse(yv, tv)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_decoupled(ym, yv, tm, tv, 1.5), ParameterError);
}

TEST_CASE("feature MSE") {
  const Tensor a = test::random_tensor({1, 3, 6}, 7), b = test::random_tensor({1, 3, 6}, 8);
  CHECK(loss_feature_mse(a, a) == 0.0);
  CHECK(loss_feature_mse(Tensor({1, 3, 6}, 0.0), Tensor({1, 3, 6}, 1.0)) == doctest::Approx(1.0));
  CHECK(loss_feature_mse(a, b) == doctest::Approx(loop_mse(a, b)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_feature_mse(a, Tensor({1, 3, 4})), DimensionError);
}

TEST_CASE("distillation cross-entropy") {
  const Tensor u({3, 4096}, 1.0 / 4096.0);
  CHECK(loss_distill(u, u) == doctest::Approx(std::log(4096.0)).epsilon(1e-12));
  CHECK(loss_distill(u, u) == doctest::Approx(8.3178).epsilon(1e-5));
  CHECK(loss_distill(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.5, 0.5})) ==
        doctest::Approx(0.6931).epsilon(1e-4));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor p = test::random_stochastic(4, 5, seed), q = test::random_stochastic(4, 5, seed + 100);
    CHECK(loss_distill(p, q) == doctest::Approx(loop_ce(p, q)).epsilon(1e-12));
    CHECK(loss_distill(p, q) >= loss_distill(p, p) - 1e-12);
    CHECK(loss_distill(p, q) >= 0.0);
  }
}

TEST_CASE("distillation clamps log(0) and rejects non-stochastic rows") {
  const double ce = loss_distill(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {1.0, 0.0}));
  CHECK(std::isfinite(ce));
  CHECK(ce == doctest::Approx(-0.5 * std::log(kLogClamp)));
  CHECK_THROWS_AS(loss_distill(Tensor({1, 2}, {0.7, 0.7}), Tensor({1, 2}, {0.5, 0.5})), NumericError);
  CHECK_THROWS_AS(loss_distill(Tensor({1, 2}, {1.5, -0.5}), Tensor({1, 2}, {0.5, 0.5})), NumericError);
}

TEST_CASE("distillation gradient matches finite differences in q") {
  const Tensor p = test::random_stochastic(3, 4, 1);
  Tensor q = test::random_stochastic(3, 4, 2);
  const Tensor g = distill_gradient_q(p, q, 0.7);
  const Tensor gp = distill_gradient_p(p, q, 0.7);
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(g[i] == doctest::Approx(-0.7 * p[i] / q[i] / 3.0).epsilon(1e-12));
    CHECK(gp[i] == doctest::Approx(-0.7 * std::log(q[i]) / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("total loss convex combination") {
  CHECK(loss_total(1.3, 2.7, 0.0) == 1.3);
  CHECK(loss_total(1.3, 2.7, 1.0) == 2.7);
  CHECK(loss_total(1.0, 2.0, 0.2) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK_THROWS_AS(loss_total(1.0, 1.0, -0.1), ParameterError);
}

TEST_CASE("mode weights and combine") {
  LossReport parts;
  parts.recon_masked = 1.5;
  parts.recon_visible = 0.5;
  parts.distill = 3.0;
  CHECK(combine({0.3, 0.2, LossMode::kMae}, parts) == 1.5);
  CHECK(combine({0.3, 0.2, LossMode::kDecoupledPixel}, parts) == doctest::Approx(0.7 * 1.5 + 0.3 * 0.5));
  CHECK(combine({0.3, 0.2, LossMode::kDecoupledFeatureMse}, parts) == doctest::Approx(0.7 * 1.5 + 0.3 * 0.5));
  CHECK(combine({0.3, 0.2, LossMode::kSdMae}, parts) == doctest::Approx(0.8 * 1.5 + 0.2 * 3.0));
  const LossWeights sd{0.0, 0.2, LossMode::kSdMae};
  CHECK(sd.masked_weight() == doctest::Approx(0.8));
  CHECK(sd.distill_weight() == 0.2);
  CHECK(sd.visible_weight() == 0.0);
  CHECK_THROWS_AS((LossWeights{1.2, 0.2, LossMode::kMae}.validate()), ConfigError);
}

TEST_CASE("loss mode names round trip") {
  for (LossMode m : {LossMode::kMae, LossMode::kDecoupledPixel, LossMode::kDecoupledFeatureMse, LossMode::kSdMae})
    CHECK(parse_loss_mode(to_string(m)) == m);
  CHECK(to_string(LossMode::kSdMae) == "sd_mae");
  CHECK_THROWS_AS(parse_loss_mode("dino"), ConfigError);
}

TEST_CASE("ablation ladder rows and their weights") {
  const auto& rows = ablation_ladder();
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].weights.mode == LossMode::kMae);
  CHECK(rows[1].weights.mode == LossMode::kDecoupledPixel);
  CHECK(rows[1].weights.alpha == 0.5);
  CHECK(rows[2].weights.mode == LossMode::kDecoupledPixel);
  CHECK(rows[2].weights.alpha == 0.2);
  CHECK(rows[3].weights.mode == LossMode::kDecoupledFeatureMse);
  CHECK(rows[3].weights.alpha == 0.2);
  CHECK(rows[4].weights.mode == LossMode::kSdMae);
  CHECK(rows[4].weights.beta == 0.2);
  // Masked proportions 1, 0.5, 0.8, 0.8, 0.8.
  const double masked[] = {1.0, 0.5, 0.8, 0.8, 0.8};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rows[i].weights.masked_weight() == doctest::Approx(masked[i]).epsilon(1e-12));
    CHECK(rows[i].weights.masked_weight() + rows[i].weights.visible_weight() + rows[i].weights.distill_weight() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
}
