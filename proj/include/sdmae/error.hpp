/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <stdexcept>
#include <string>

namespace sdmae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes disagree (image geometry, sequence lengths, parameter shapes).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument is outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared in a forward or backward pass, or a numeric contract broke.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration: unknown keys, unparsable values, incompatible settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset problems: missing files, undecodable images, empty splits.
class DataError : public Error {
 public:
  using Error::Error;
};

/// File system failures, always carrying the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointErrorCode {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kCorruptManifest,
  kCorruptData,
  kFingerprintMismatch,
  kMissingArray,
};

const char* to_string(CheckpointErrorCode code);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

}  // namespace sdmae
