/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "sdmae/backbone.hpp"
#include "sdmae/error.hpp"
#include "support.hpp"

using namespace sdmae;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat rows_of(const Tensor& t, std::size_t r0, std::size_t n) {
  Mat m(n, std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < t.cols(); ++c) m[i][c] = t.at(r0 + i, c);
  return m;
}

// Unit-gain layer norm; the models under test keep their initial gamma = 1, beta = 0.
Mat layer_norm(const Mat& x) {
  Mat y = x;
  for (auto& r : y) {
    double mean = 0, var = 0;
    for (double v : r) mean += v;
    mean /= double(r.size());
    for (double v : r) var += (v - mean) * (v - mean);
    var /= double(r.size());
    for (double& v : r) v = (v - mean) / std::sqrt(var + 1e-6);
  }
  return y;
}

Mat linear(const Mat& x, nn::Linear& l) {
  const std::size_t out = l.out_features(), in = l.in_features();
  Mat y(x.size(), std::vector<double>(out));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = l.bias().value[o];
      for (std::size_t k = 0; k < in; ++k) s += l.weight().value[o * in + k] * x[i][k];
      y[i][o] = s;
    }
  return y;
}

Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Mat attention(const Mat& x, nn::Attention& attn, std::size_t heads) {
  const std::size_t l = x.size(), w = x[0].size(), dh = w / heads;
  const Mat qkv = linear(x, attn.qkv());
  Mat out(l, std::vector<double>(w, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < l; ++i) {
      std::vector<double> s(l);
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < l; ++j) {
        double d = 0;
        for (std::size_t c = 0; c < dh; ++c) d += qkv[i][h * dh + c] * qkv[j][w + h * dh + c];
        s[j] = d / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < l; ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / z * qkv[j][2 * w + h * dh + c];
    }
  return linear(out, attn.proj());
}

Mat block(const Mat& x, nn::Block& b, std::size_t heads) {
  Mat y = add(x, attention(layer_norm(x), b.attention(), heads));
  Mat hdn = linear(layer_norm(y), b.mlp().fc1());
  for (auto& r : hdn)
    for (double& v : r) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return add(y, linear(hdn, b.mlp().fc2()));
}

void check_close(const Tensor& t, std::size_t r0, const Mat& want, double tol) {
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t c = 0; c < want[i].size(); ++c) CHECK(t.at(r0 + i, c) == doctest::Approx(want[i][c]).epsilon(tol));
}

}  // namespace

TEST_CASE("sincos table matches the 2D sin-cos formula") {
  const std::size_t n = 16, w = 8, g = 4;
  const Tensor t = sincos_position_table(n, w);
  REQUIRE(t.shape() == Shape{n + 1, w});
  for (std::size_t c = 0; c < w; ++c) CHECK(t.at(0, c) == 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double col = double(p % g), row = double(p / g);
    const double want[8] = {std::sin(col), std::sin(col / 100.0), std::cos(col), std::cos(col / 100.0),
                            std::sin(row), std::sin(row / 100.0), std::cos(row), std::cos(row / 100.0)};
    for (std::size_t c = 0; c < w; ++c) CHECK(t.at(p + 1, c) == doctest::Approx(want[c]).epsilon(1e-14));
  }
  CHECK(sincos_position_table(n, w).values() == t.values());
  CHECK_THROWS_AS(sincos_position_table(15, 8), DimensionError);
  CHECK_THROWS_AS(sincos_position_table(16, 6), ConfigError);
}

TEST_CASE("default encoder has about 21M parameters") {
  ModelConfig cfg;  // 224 / 16, width 384, depth 12
  // patch embed 768*384+384, class token 384, 12 blocks of 1,774,464, final norm 768
  CHECK(encoder_parameter_count(cfg) == 21590016);
  CHECK(std::abs(double(encoder_parameter_count(cfg)) - 21e6) <= 0.1 * 21e6);
  const ModelConfig tiny = test::tiny_model();
  nn::Rng rng(1);
  Encoder enc(tiny, rng);
  nn::ParamRefs ps;
  enc.collect(ps);
  std::size_t total = 0;
  for (auto* p : ps) total += p->value.size();
  CHECK(total == encoder_parameter_count(tiny));
}

TEST_CASE("embed_visible: zero map yields positions, random case matches matmul") {
  ModelConfig cfg = test::tiny_model();  // N = 4, D = 48, width 16
  nn::Rng rng(2);
  Encoder enc(cfg, rng);
  const PatchSequence seq = patchify(test::random_images(2, 8, 5), 4);
  const MaskPlan plan = random_mask(seq, 0.5, 9);
  const Tensor& pos = enc.position_table();

  Tensor z = enc.embed_visible(seq, plan);
  REQUIRE(z.shape() == Shape{4, 16});
  const std::size_t d = 48, w = 16;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 2; ++j) {
      const std::size_t idx = plan.visible[b][j];
      const double* x = seq.patches.data() + (b * 4 + idx) * d;
      for (std::size_t o = 0; o < w; ++o) {
        double want = enc.patch_embed().bias().value[o] + pos.at(idx + 1, o);
        for (std::size_t k = 0; k < d; ++k) want += enc.patch_embed().weight().value[o * d + k] * x[k];
        CHECK(z.at(b * 2 + j, o) == doctest::Approx(want).epsilon(1e-12));
      }
    }

  enc.patch_embed().weight().value.fill(0.0);
  enc.patch_embed().bias().value.fill(0.0);
  z = enc.embed_visible(seq, plan);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t o = 0; o < w; ++o) CHECK(z.at(b * 2 + j, o) == pos.at(plan.visible[b][j] + 1, o));
}

TEST_CASE("encoder depth 0 is the identity") {
  ModelConfig cfg = test::tiny_model();
  cfg.encoder_depth = 0;
  nn::Rng rng(3);
  Encoder enc(cfg, rng);
  const Tensor z = test::random_tensor({6, 16}, 4);
  CHECK(enc.encode(z, 2, 3).values() == z.values());
}

TEST_CASE("depth-1 encoder matches a straight-line oracle") {
  ModelConfig cfg = test::tiny_model();
  cfg.encoder_depth = 1;
  nn::Rng rng(11);
  Encoder enc(cfg, rng);
  const std::size_t b = 2, v = 3, w = 16;
  const Tensor z = test::random_tensor({b * v, w}, 12);
  const Tensor f = enc.encode(z, b, v);
  CHECK(enc.last_sequence_length() == v + 1);
  for (std::size_t bi = 0; bi < b; ++bi) {
    Mat x(1, std::vector<double>(w));
    for (std::size_t c = 0; c < w; ++c) x[0][c] = enc.class_token().value[c] + enc.position_table().at(0, c);
    const Mat toks = rows_of(z, bi * v, v);
    x.insert(x.end(), toks.begin(), toks.end());
    const Mat y = layer_norm(block(x, enc.block(0), cfg.encoder_heads));
    check_close(f, bi * v, Mat(y.begin() + 1, y.end()), 1e-10);
    check_close(enc.class_features(), bi, Mat(y.begin(), y.begin() + 1), 1e-10);
  }
}

TEST_CASE("permuting tokens permutes encoder outputs") {
  ModelConfig cfg = test::tiny_model();
  nn::Rng rng(4);
  Encoder enc(cfg, rng);
  const Tensor z = test::random_tensor({2, 16}, 5);
  Tensor zs({2, 16});
  for (std::size_t c = 0; c < 16; ++c) zs.at(0, c) = z.at(1, c), zs.at(1, c) = z.at(0, c);
  const Tensor f = enc.encode(z, 1, 2);
  const Tensor fs = enc.encode(zs, 1, 2);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(fs.at(0, c) == doctest::Approx(f.at(1, c)).epsilon(1e-12));
    CHECK(fs.at(1, c) == doctest::Approx(f.at(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("non-finite values name the failing block") {
  ModelConfig cfg = test::tiny_model();
  nn::Rng rng(5);
  Encoder enc(cfg, rng);
  enc.block(1).mlp().fc2().bias().value[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    enc.encode(test::random_tensor({4, 16}, 1), 2, 2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
}

TEST_CASE("decoder input uses one shared mask token plus positions") {
  const ModelConfig cfg = test::tiny_model();
  nn::Rng rng(6);
  Encoder enc(cfg, rng);
  Decoder dec(cfg, rng);
  const PatchSequence seq = patchify(test::random_images(2, 8, 7), 4);
  const MaskPlan plan = random_mask(seq, 0.5, 3);
  const Tensor f = enc.encode(enc.embed_visible(seq, plan), 2, plan.num_visible());
  const DecoderOutput out = dec.forward(f, plan);
  CHECK(out.pixels.shape() == Shape{8, 48});
  CHECK(out.features.shape() == Shape{8, 8});
  CHECK(out.pixels.all_finite());
  const Tensor& in = dec.last_input();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t idx : plan.masked[b])
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(in.at(b * 4 + idx, c) == doctest::Approx(dec.mask_token().value[c] + dec.position_table().at(idx + 1, c)));

  const SplitRows parts = split_by_plan(out.pixels, plan);
  CHECK(parts.masked.rows() == 4);
  CHECK(parts.visible.rows() == 4);
  CHECK(merge_by_plan(parts.masked, parts.visible, plan).values() == out.pixels.values());
}

TEST_CASE("mu = 0 leaves no mask tokens") {
  const ModelConfig cfg = test::tiny_model();
  nn::Rng rng(8);
  Encoder enc(cfg, rng);
  Decoder dec(cfg, rng);
  const PatchSequence seq = patchify(test::random_images(1, 8, 9), 4);
  const MaskPlan plan = full_plan(1, 4);
  const DecoderOutput out = dec.forward(enc.encode(enc.embed_visible(seq, plan), 1, 4), plan);
  const SplitRows parts = split_by_plan(out.pixels, plan);
  CHECK(parts.masked.rows() == 0);
  CHECK(parts.visible.values() == out.pixels.values());
  CHECK_THROWS_AS(dec.forward(Tensor({3, 16}), plan), DimensionError);
}

TEST_CASE("attention maps are normalized, deterministic and match a hand oracle") {
  ModelConfig cfg = test::tiny_model();
  cfg.encoder_depth = 1;
  cfg.encoder_heads = 1;
  nn::Rng rng(10);
  Encoder enc(cfg, rng);
  Tensor imgs = test::random_images(3, 8, 11).pixels;
  for (std::size_t i = 0; i < 8 * 8 * 3; ++i) imgs[2 * 192 + i] = imgs[i];  // image 2 duplicates image 0
  const Tensor maps = attention_maps(enc, ImageBatch{imgs}, 4);
  REQUIRE(maps.shape() == Shape{3, 1, 2, 2});
  for (std::size_t b = 0; b < 3; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += maps[b * 4 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (std::size_t j = 0; j < 4; ++j) CHECK(maps[8 + j] == maps[j]);

  // softmax(q_cls k_j / sqrt(d)) over patch keys, the class key dropped and renormalized
  const PatchSequence seq = patchify(ImageBatch{imgs}, 4);
  const Tensor z = enc.embed_visible(seq, full_plan(3, 4));
  Mat x(1, std::vector<double>(16));
  for (std::size_t c = 0; c < 16; ++c) x[0][c] = enc.class_token().value[c] + enc.position_table().at(0, c);
  const Mat toks = rows_of(z, 0, 4);
  x.insert(x.end(), toks.begin(), toks.end());
  const Mat qkv = linear(layer_norm(x), enc.block(0).attention().qkv());
  std::vector<double> e(4);
  double tot = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    double d = 0;
    for (std::size_t c = 0; c < 16; ++c) d += qkv[0][c] * qkv[j + 1][16 + c];
    tot += (e[j] = std::exp(d / 4.0));
  }
  for (std::size_t j = 0; j < 4; ++j) CHECK(maps[j] == doctest::Approx(e[j] / tot).epsilon(1e-10));
}

TEST_CASE("model config validation") {
  ModelConfig cfg = test::tiny_model();
  CHECK_NOTHROW(cfg.validate());
  cfg.encoder_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = test::tiny_model();
  cfg.image_size = 10;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = test::tiny_model();
  cfg.head.teacher_temperature = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
