/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "sdmae/error.hpp"

namespace sdmae {

const char* to_string(CheckpointErrorCode code) {
  switch (code) {
    case CheckpointErrorCode::kIo: return "checkpoint io error";
    case CheckpointErrorCode::kBadMagic: return "not a checkpoint archive";
    case CheckpointErrorCode::kVersionMismatch: return "checkpoint version mismatch";
    case CheckpointErrorCode::kCorruptManifest: return "corrupt checkpoint manifest";
    case CheckpointErrorCode::kCorruptData: return "corrupt checkpoint data";
    case CheckpointErrorCode::kFingerprintMismatch: return "config fingerprint mismatch";
    case CheckpointErrorCode::kMissingArray: return "checkpoint array missing";
  }
  return "checkpoint error";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return 1;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> index) {
  const std::size_t width = src.cols();
  Tensor out = Tensor::matrix(index.size(), width);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src.rows()) throw DimensionError("gather_rows index out of range");
    std::copy_n(src.data() + index[i] * width, width, out.data() + i * width);
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("max_abs_diff: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace sdmae
