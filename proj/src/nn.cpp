/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "sdmae/error.hpp"
#include "sdmae/kernels.hpp"

namespace sdmae::nn {

void trunc_normal(Tensor& t, double sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.values()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = sigma * z;
  }
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("add_inplace: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(name + ".weight", {out, in}), has_bias_(bias) {
  trunc_normal(weight_.value, 0.02, rng);
  if (has_bias_) bias_ = Param(name + ".bias", {out}, false);
}

Tensor Linear::forward(const Tensor& x) {
  const std::size_t in = in_features(), out = out_features();
  if (x.cols() != in) {
    throw DimensionError(weight_.name + ": input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(in));
  }
  x_ = x;
  const std::size_t rows = x.rows();
  Tensor y = Tensor::matrix(rows, out);
  if (has_bias_) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(bias_.value.data(), out, y.data() + r * out);
  }
  kernels::gemm_nt(x.span(), weight_.value.span(), y.span(), {rows, out, in}, has_bias_);
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const std::size_t in = in_features(), out = out_features(), rows = x_.rows();
  if (dy.rows() != rows || dy.cols() != out) {
    throw DimensionError(weight_.name + ": gradient shape " + shape_string(dy.shape()));
  }
  if (weight_.trainable) {
    kernels::gemm_tn(dy.span(), x_.span(), weight_.grad.span(), {out, in, rows}, true);
  }
  if (has_bias_ && bias_.trainable) kernels::column_sums(dy.span(), rows, out, bias_.grad.span());
  Tensor dx = Tensor::matrix(rows, in);
  kernels::gemm_nn(dy.span(), weight_.value.span(), dx.span(), {rows, in, out}, false);
  return dx;
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, std::size_t width)
    : gamma_(name + ".weight", {width}, false), beta_(name + ".bias", {width}, false) {
  gamma_.value.fill(1.0);
}

Tensor LayerNorm::forward(const Tensor& x) {
  const std::size_t w = gamma_.value.size();
  if (x.cols() != w) throw DimensionError(gamma_.name + ": input width mismatch");
  const std::size_t rows = x.rows();
  xhat_ = Tensor::matrix(rows, w);
  rstd_.assign(rows, 0.0);
  Tensor y = Tensor::matrix(rows, w);
  const double* g = gamma_.value.data();
  const double* bt = beta_.value.data();
#pragma omp parallel for schedule(static) if (rows * w >= 16384)
  for (std::int64_t ri = 0; ri < static_cast<std::int64_t>(rows); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* xr = x.data() + r * w;
    double mean = 0.0;
    for (std::size_t j = 0; j < w; ++j) mean += xr[j];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(w);
    const double rs = 1.0 / std::sqrt(var + kEpsilon);
    rstd_[r] = rs;
    double* hr = xhat_.data() + r * w;
    double* yr = y.data() + r * w;
    for (std::size_t j = 0; j < w; ++j) {
      hr[j] = (xr[j] - mean) * rs;
      yr[j] = hr[j] * g[j] + bt[j];
    }
  }
  return y;
}

Tensor LayerNorm::backward(const Tensor& dy) {
  const std::size_t w = gamma_.value.size(), rows = xhat_.rows();
  Tensor dx = Tensor::matrix(rows, w);
  const double* g = gamma_.value.data();
  // Parameter gradients summed serially so the reduction order is fixed.
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dyr = dy.data() + r * w;
    const double* hr = xhat_.data() + r * w;
    for (std::size_t j = 0; j < w; ++j) {
      gamma_.grad[j] += dyr[j] * hr[j];
      beta_.grad[j] += dyr[j];
    }
  }
#pragma omp parallel for schedule(static) if (rows * w >= 16384)
  for (std::int64_t ri = 0; ri < static_cast<std::int64_t>(rows); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* dyr = dy.data() + r * w;
    const double* hr = xhat_.data() + r * w;
    double mean_d = 0.0, mean_dh = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double d = dyr[j] * g[j];
      mean_d += d;
      mean_dh += d * hr[j];
    }
    mean_d /= static_cast<double>(w);
    mean_dh /= static_cast<double>(w);
    double* dxr = dx.data() + r * w;
    for (std::size_t j = 0; j < w; ++j)
      dxr[j] = rstd_[r] * (dyr[j] * g[j] - mean_d - hr[j] * mean_dh);
  }
  return dx;
}

void LayerNorm::collect(ParamRefs& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ------------------------------------------------------------- Attention

Attention::Attention(const std::string& name, std::size_t width, std::size_t heads, Rng& rng)
    : qkv_(name + ".qkv", width, 3 * width, rng),
      proj_(name + ".proj", width, width, rng),
      width_(width),
      heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ParameterError(name + ": width " + std::to_string(width) +
                         " not divisible by heads " + std::to_string(heads));
  }
}

Tensor Attention::forward(const Tensor& x, std::size_t batch, std::size_t seq) {
  if (x.rows() != batch * seq) throw DimensionError("attention: rows != batch * seq");
  batch_ = batch;
  seq_ = seq;
  qkv_out_ = qkv_.forward(x);
  const std::size_t w = width_, h = heads_, dh = w / h, l = seq, w3 = 3 * w;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  probs_.assign(batch * h * l * l, 0.0);
  Tensor out = Tensor::matrix(batch * l, w);
  const double* qkv = qkv_out_.data();
  const auto pairs = static_cast<std::int64_t>(batch * h);
#pragma omp parallel for schedule(static)
  for (std::int64_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / h, hd = static_cast<std::size_t>(bh) % h;
    double* a = probs_.data() + static_cast<std::size_t>(bh) * l * l;
    const double* base = qkv + b * l * w3;
    for (std::size_t i = 0; i < l; ++i) {
      const double* q = base + i * w3 + hd * dh;
      for (std::size_t j = 0; j < l; ++j) {
        const double* k = base + j * w3 + w + hd * dh;
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q[d] * k[d];
        a[i * l + j] = s * scale;
      }
    }
    kernels::reference::softmax_rows({a, l * l}, l, l, 1.0);
    for (std::size_t i = 0; i < l; ++i) {
      double* o = out.data() + (b * l + i) * w + hd * dh;
      for (std::size_t j = 0; j < l; ++j) {
        const double aij = a[i * l + j];
        const double* v = base + j * w3 + 2 * w + hd * dh;
        for (std::size_t d = 0; d < dh; ++d) o[d] += aij * v[d];
      }
    }
  }
  return proj_.forward(out);
}

Tensor Attention::backward(const Tensor& dy) {
  Tensor dout = proj_.backward(dy);
  const std::size_t w = width_, h = heads_, dh = w / h, l = seq_, w3 = 3 * w;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor dqkv = Tensor::matrix(batch_ * l, w3);
  const double* qkv = qkv_out_.data();
  const auto pairs = static_cast<std::int64_t>(batch_ * h);
#pragma omp parallel for schedule(static)
  for (std::int64_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = static_cast<std::size_t>(bh) / h, hd = static_cast<std::size_t>(bh) % h;
    const double* a = probs_.data() + static_cast<std::size_t>(bh) * l * l;
    const double* base = qkv + b * l * w3;
    double* dbase = dqkv.data() + b * l * w3;
    std::vector<double> ds(l * l);
    for (std::size_t i = 0; i < l; ++i) {
      const double* dor = dout.data() + (b * l + i) * w + hd * dh;
      double dot = 0.0;
      for (std::size_t j = 0; j < l; ++j) {
        const double* v = base + j * w3 + 2 * w + hd * dh;
        double* dv = dbase + j * w3 + 2 * w + hd * dh;
        double da = 0.0;
        for (std::size_t d = 0; d < dh; ++d) {
          da += dor[d] * v[d];
          dv[d] += a[i * l + j] * dor[d];
        }
        ds[i * l + j] = da;
        dot += da * a[i * l + j];
      }
      for (std::size_t j = 0; j < l; ++j) ds[i * l + j] = a[i * l + j] * (ds[i * l + j] - dot);
    }
    for (std::size_t i = 0; i < l; ++i) {
      const double* q = base + i * w3 + hd * dh;
      double* dq = dbase + i * w3 + hd * dh;
      for (std::size_t j = 0; j < l; ++j) {
        const double g = ds[i * l + j] * scale;
        const double* k = base + j * w3 + w + hd * dh;
        double* dk = dbase + j * w3 + w + hd * dh;
        for (std::size_t d = 0; d < dh; ++d) {
          dq[d] += g * k[d];
          dk[d] += g * q[d];
        }
      }
    }
  }
  return qkv_.backward(dqkv);
}

void Attention::collect(ParamRefs& out) {
  qkv_.collect(out);
  proj_.collect(out);
}

// ------------------------------------------------------------------- Mlp

Mlp::Mlp(const std::string& name, std::size_t width, std::size_t hidden, Rng& rng)
    : fc1_(name + ".fc1", width, hidden, rng), fc2_(name + ".fc2", hidden, width, rng) {}

Tensor Mlp::forward(const Tensor& x) {
  pre_act_ = fc1_.forward(x);
  Tensor act(pre_act_.shape());
  kernels::gelu_forward(pre_act_.span(), act.span());
  return fc2_.forward(act);
}

Tensor Mlp::backward(const Tensor& dy) {
  Tensor dact = fc2_.backward(dy);
  Tensor dpre(pre_act_.shape());
  kernels::gelu_backward(pre_act_.span(), dact.span(), dpre.span());
  return fc1_.backward(dpre);
}

void Mlp::collect(ParamRefs& out) {
  fc1_.collect(out);
  fc2_.collect(out);
}

// ----------------------------------------------------------------- Block

Block::Block(const std::string& name, std::size_t width, std::size_t heads,
             std::size_t mlp_hidden, Rng& rng)
    : ln1_(name + ".norm1", width),
      attn_(name + ".attn", width, heads, rng),
      ln2_(name + ".norm2", width),
      mlp_(name + ".mlp", width, mlp_hidden, rng) {}

Tensor Block::forward(const Tensor& x, std::size_t batch, std::size_t seq) {
  Tensor x1 = attn_.forward(ln1_.forward(x), batch, seq);
  add_inplace(x1, x);
  Tensor out = mlp_.forward(ln2_.forward(x1));
  add_inplace(out, x1);
  return out;
}

Tensor Block::backward(const Tensor& dy) {
  Tensor dx1 = ln2_.backward(mlp_.backward(dy));
  add_inplace(dx1, dy);
  Tensor dx = ln1_.backward(attn_.backward(dx1));
  add_inplace(dx, dx1);
  return dx;
}

void Block::collect(ParamRefs& out) {
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  mlp_.collect(out);
}

}  // namespace sdmae::nn
