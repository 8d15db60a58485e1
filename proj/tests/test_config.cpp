/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "sdmae/config.hpp"
#include "sdmae/error.hpp"
#include "support.hpp"

using namespace sdmae;

namespace {

std::string error_of(std::string_view text, std::vector<std::string> overrides = {}) {
  try {
    parse_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal file yields the defaults") {
  const RunConfig cfg = parse_config("schema_version = 1\n");
  const RunConfig def = default_config();
  CHECK(to_config_text(cfg) == to_config_text(def));
  CHECK(cfg.train.mask_ratio == 0.6);
  CHECK(cfg.train.loss.beta == 0.2);
  CHECK(cfg.train.loss.mode == LossMode::kSdMae);
  CHECK(cfg.model.head.bottleneck_dim == 256);
  CHECK(cfg.model.head.hidden_dim == 4096);
}

TEST_CASE("comments, whitespace and typed values") {
  const RunConfig cfg = parse_config(
      "# header\n"
      "schema_version = 1\n"
      "  train.epochs=7   # trailing comment\n"
      "\n"
      "model.pos_embed = learned\n"
      "train.augment = false\n"
      "data.ignore_classes = BACK, ADI\n");
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.model.pos_embed == PosEmbedKind::kLearned);
  CHECK_FALSE(cfg.train.augment);
  CHECK(cfg.data.ignore_classes == std::vector<std::string>{"BACK", "ADI"});
}

TEST_CASE("every unknown key is reported at once") {
  const std::string msg = error_of("schema_version = 1\ntrain.epoch = 3\nmodel.widht = 4\ntrain.epochs = 2\n");
  CHECK(msg.find("train.epoch") != std::string::npos);
  CHECK(msg.find("model.widht") != std::string::npos);
  CHECK(error_of("schema_version = 1\n", {"nope.key=1"}).find("nope.key") != std::string::npos);
}

TEST_CASE("schema version, duplicates, malformed lines and bad values") {
  CHECK(error_of("train.epochs = 3\n").find("schema_version") != std::string::npos);
  CHECK(error_of("schema_version = 2\n").find("schema_version") != std::string::npos);
  CHECK(error_of("schema_version = 1\ntrain.epochs = 3\ntrain.epochs = 4\n").find("duplicate") != std::string::npos);
  CHECK_FALSE(error_of("schema_version = 1\njust words\n").empty());
  CHECK_FALSE(error_of("schema_version = 1\ntrain.epochs = -3\n").empty());
  CHECK_FALSE(error_of("schema_version = 1\ntrain.loss.beta = 1.5\n").empty());
  CHECK_FALSE(error_of("schema_version = 1\ntrain.loss.mode = dino\n").empty());
  CHECK_FALSE(error_of("schema_version = 1\nmodel.patch_size = 15\n").empty());
  CHECK_FALSE(error_of("schema_version = 1\ntrain.augment = maybe\n").empty());
}

TEST_CASE("precedence: preset < file < command line") {
  const std::string text = "schema_version = 1\ntrain.base_lr = 2e-4\ntrain.preset = S1\ntrain.epochs = 5\n";
  const RunConfig file_only = parse_config(text);
  CHECK(file_only.train.base_lr == 2e-4);              // explicit key beats the preset
  CHECK(file_only.train.finetune_weight_decay == 5e-3);  // preset value survives
  const std::vector<std::string> cli = {"train.epochs=9", "train.preset=S4"};
  const RunConfig both = parse_config(text, cli);
  CHECK(both.train.epochs == 9);
  CHECK(both.train.preset == Preset::kS4);
  CHECK(both.train.base_lr == 2e-4);
  CHECK(both.train.finetune_lr == 1e-3);
}

TEST_CASE("preset S4 with sd_mae resolves to the published values") {
  const std::vector<std::string> cli = {"train.preset=S4", "train.loss.mode=sd_mae"};
  const RunConfig cfg = default_config(cli);
  CHECK(get_value(cfg, "train.loss.beta") == "0.2");
  CHECK(get_value(cfg, "train.mask_ratio") == "0.6");
  CHECK(get_value(cfg, "train.base_lr") == "0.00015");
  CHECK(get_value(cfg, "train.finetune_weight_decay") == "0.05");
  CHECK(get_value(cfg, "train.weight_decay") == "0.05");
  const std::string text = to_config_text(cfg);
  CHECK(text.find("train.loss.beta = 0.2\n") != std::string::npos);
  CHECK(text.find("train.mask_ratio = 0.6\n") != std::string::npos);
}

TEST_CASE("preset table") {
  CHECK(preset_values(Preset::kS1).pretrain_lr == 1e-4);
  CHECK(preset_values(Preset::kS2).finetune_weight_decay == 5e-2);
  CHECK(preset_values(Preset::kS3).pretrain_lr == 1.5e-4);
  CHECK(preset_values(Preset::kS4).finetune_lr == 1e-3);
  CHECK(parse_preset("s3") == Preset::kS3);
  CHECK_THROWS_AS(parse_preset("S5"), ConfigError);
}

TEST_CASE("resolved text round-trips exactly") {
  const std::vector<std::string> cli = {"train.loss.alpha=0.3", "train.loss.mode=decoupled_pixel",
                                        "model.encoder_width=48", "model.encoder_heads=3",
                                        "data.ignore_classes=a,b", "train.base_lr=1.2345678901234e-4"};
  const RunConfig cfg = default_config(cli);
  const std::string text = to_config_text(cfg);
  const RunConfig back = parse_config(text);
  CHECK(to_config_text(back) == text);
  CHECK(back.train.base_lr == cfg.train.base_lr);
  for (const ConfigKey& k : config_keys()) CHECK(get_value(back, k.key) == get_value(cfg, k.key));

  const auto dir = test::scratch_dir("config_file");
  std::ofstream(dir / "run.cfg") << text;
  CHECK(to_config_text(load_config(dir / "run.cfg")) == text);
  CHECK_THROWS_AS(load_config(dir / "absent.cfg"), ConfigError);
}

TEST_CASE("fingerprint covers model and train keys only") {
  RunConfig a = default_config();
  RunConfig b = a;
  b.eval.seeds = 7;
  b.data.root = "/elsewhere";
  CHECK(config_fingerprint(a.model, a.train) == config_fingerprint(b.model, b.train));
  b.train.loss.beta = 0.3;
  CHECK(config_fingerprint(a.model, a.train) != config_fingerprint(b.model, b.train));
  RunConfig c = a;
  apply_section(c, section_json(b, "train."));
  CHECK(c.train.loss.beta == 0.3);
}

TEST_CASE("number formatting is shortest round-trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.5e-4) == "0.00015");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
