/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sdmae/backbone.hpp"
#include "sdmae/datakit.hpp"
#include "sdmae/evaluate.hpp"
#include "sdmae/pretrain.hpp"

namespace sdmae {

inline constexpr int kSchemaVersion = 1;

struct DataConfig {
  /// Dataset folder; empty selects the synthetic generator.
  std::string root;
  std::vector<std::string> ignore_classes;
  /// image_size is taken from the model config.
  SyntheticSpec synthetic;
};

/// Everything one run needs; a resolved copy is written into each run directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;
  std::string output_dir;  // empty: $SDMAE_OUTPUT_ROOT or ./runs
  std::string run_name;    // empty: derived from loss mode and seed

  void validate() const;
};

/// One documented key of the config file.
struct ConfigKey {
  std::string key;
  std::string doc;
  /// False when the default is our own choice rather than a published value.
  bool published_default;
};
const std::vector<ConfigKey>& config_keys();

std::string get_value(const RunConfig& cfg, std::string_view key);
/// Throws ConfigError on unknown keys or unparsable values.
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses `key = value` lines ('#' starts a comment). The file must declare
/// `schema_version = 1`. A preset is applied first, then the remaining keys
/// in file order, then `overrides` ("key=value"), so explicit values always
/// win over the preset. All unknown keys are reported together.
RunConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});
/// Defaults plus overrides, without a file.
RunConfig default_config(std::span<const std::string> overrides = {});
RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Every key with its resolved value, with schema_version first.
std::string to_config_text(const RunConfig& cfg);
/// The same content as a flat JSON object of strings.
nlohmann::json to_json(const RunConfig& cfg);

/// Keys under one prefix ("model." or "train."), as a flat object of strings.
nlohmann::json section_json(const RunConfig& cfg, std::string_view prefix);
void apply_section(RunConfig& cfg, const nlohmann::json& section);

/// FNV-1a of the canonical (sorted) model and train sections.
std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train);

/// Shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace sdmae
