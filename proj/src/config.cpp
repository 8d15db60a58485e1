/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "sdmae/checkpoint.hpp"
#include "sdmae/error.hpp"

namespace sdmae {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("not a number: '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_unsigned(std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("not a non-negative integer: '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("not a boolean: '" + std::string(v) + "'");
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const std::string_view item = trim(v.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Entry {
  ConfigKey info;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Field>
Entry size_entry(std::string key, std::string doc, bool published, Field field) {
  return {{std::move(key), std::move(doc), published},
          [field](RunConfig& c, std::string_view v) { field(c) = static_cast<std::size_t>(parse_unsigned(v)); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry u64_entry(std::string key, std::string doc, bool published, Field field) {
  return {{std::move(key), std::move(doc), published},
          [field](RunConfig& c, std::string_view v) { field(c) = parse_unsigned(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry double_entry(std::string key, std::string doc, bool published, Field field) {
  return {{std::move(key), std::move(doc), published},
          [field](RunConfig& c, std::string_view v) { field(c) = parse_double(v); },
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

template <class Field>
Entry bool_entry(std::string key, std::string doc, bool published, Field field) {
  return {{std::move(key), std::move(doc), published},
          [field](RunConfig& c, std::string_view v) { field(c) = parse_bool(v); },
          [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Field>
Entry string_entry(std::string key, std::string doc, bool published, Field field) {
  return {{std::move(key), std::move(doc), published},
          [field](RunConfig& c, std::string_view v) { field(c) = std::string(v); },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }};
}

template <class Field, class Parse>
Entry enum_entry(std::string key, std::string doc, bool published, Field field, Parse parse) {
  return {{std::move(key), std::move(doc), published},
          [field, parse](RunConfig& c, std::string_view v) { field(c) = parse(std::string(v)); },
          [field](const RunConfig& c) { return to_string(field(const_cast<RunConfig&>(c))); }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

std::vector<Entry> build_entries() {
  std::vector<Entry> e;
  // model
  e.push_back(size_entry("model.image_size", "square input side in pixels", true, FIELD(model.image_size)));
  e.push_back(size_entry("model.patch_size", "patch side P", true, FIELD(model.patch_size)));
  e.push_back(size_entry("model.channels", "image channels", true, FIELD(model.channels)));
  e.push_back(size_entry("model.encoder_depth", "encoder blocks", true, FIELD(model.encoder_depth)));
  e.push_back(size_entry("model.encoder_width", "encoder token width", true, FIELD(model.encoder_width)));
  e.push_back(size_entry("model.encoder_heads", "encoder attention heads", true, FIELD(model.encoder_heads)));
  e.push_back(size_entry("model.decoder_depth", "decoder blocks", false, FIELD(model.decoder_depth)));
  e.push_back(size_entry("model.decoder_width", "decoder token width", true, FIELD(model.decoder_width)));
  e.push_back(size_entry("model.decoder_heads", "decoder attention heads", false, FIELD(model.decoder_heads)));
  e.push_back(size_entry("model.mlp_ratio", "MLP hidden width / token width", true, FIELD(model.mlp_ratio)));
  e.push_back(enum_entry("model.pos_embed", "sincos | learned", false, FIELD(model.pos_embed), parse_pos_embed));
  e.push_back(u64_entry("model.init_seed", "parameter initialization seed", false, FIELD(model.init_seed)));
  e.push_back(size_entry("model.head.hidden_dim", "projection head hidden width", false, FIELD(model.head.hidden_dim)));
  e.push_back(size_entry("model.head.bottleneck_dim", "L2-normalized bottleneck width", false,
                         FIELD(model.head.bottleneck_dim)));
  e.push_back(size_entry("model.head.output_dim", "distribution size K", false, FIELD(model.head.output_dim)));
  e.push_back(double_entry("model.head.student_temperature", "student softmax temperature", false,
                           FIELD(model.head.student_temperature)));
  e.push_back(double_entry("model.head.teacher_temperature", "teacher softmax temperature", false,
                           FIELD(model.head.teacher_temperature)));
  e.push_back(enum_entry("model.head.student_source", "encoded | projected", false,
                         FIELD(model.head.student_source), parse_student_source));
  e.push_back(enum_entry("model.head.teacher_source", "pre_projection | post_projection", false,
                         FIELD(model.head.teacher_source), parse_teacher_source));
  e.push_back(bool_entry("model.head.stop_gradient", "teacher distribution is a constant", true,
                         FIELD(model.head.stop_gradient)));
  // train
  e.push_back(size_entry("train.epochs", "pretraining epochs", true, FIELD(train.epochs)));
  e.push_back(size_entry("train.warmup_epochs", "linear warm-up epochs", true, FIELD(train.warmup_epochs)));
  e.push_back(double_entry("train.base_lr", "pretraining lr before batch scaling", true, FIELD(train.base_lr)));
  e.push_back(double_entry("train.weight_decay", "pretraining decoupled weight decay", false,
                           FIELD(train.weight_decay)));
  e.push_back(size_entry("train.batch_size", "images per step", false, FIELD(train.batch_size)));
  e.push_back(double_entry("train.mask_ratio", "fraction of patches masked", true, FIELD(train.mask_ratio)));
  e.push_back(enum_entry("train.loss.mode", "mae | decoupled_pixel | decoupled_feature_mse | sd_mae", true,
                         FIELD(train.loss.mode), [](const std::string& s) { return parse_loss_mode(s); }));
  e.push_back(double_entry("train.loss.alpha", "visible-term weight", true, FIELD(train.loss.alpha)));
  e.push_back(double_entry("train.loss.beta", "distillation weight", true, FIELD(train.loss.beta)));
  e.push_back(u64_entry("train.seed", "mask, order and augmentation seed", false, FIELD(train.seed)));
  e.push_back(enum_entry("train.preset", "none | S1 | S2 | S3 | S4", true, FIELD(train.preset),
                         [](const std::string& s) { return parse_preset(s); }));
  e.push_back(bool_entry("train.scale_lr_by_batch", "multiply lr by batch_size/256", false,
                         FIELD(train.scale_lr_by_batch)));
  e.push_back(bool_entry("train.augment", "random resized crop + horizontal flip", false, FIELD(train.augment)));
  e.push_back(double_entry("train.crop_min_scale", "smallest crop area fraction", false,
                           FIELD(train.crop_min_scale)));
  e.push_back(bool_entry("train.freeze_masks", "reuse one mask for every step", false, FIELD(train.freeze_masks)));
  e.push_back(size_entry("train.checkpoint_every", "epochs between checkpoints, 0 = end only", false,
                         FIELD(train.checkpoint_every)));
  e.push_back(double_entry("train.finetune_lr", "fine-tuning lr before batch scaling", true,
                           FIELD(train.finetune_lr)));
  e.push_back(double_entry("train.finetune_weight_decay", "fine-tuning weight decay", true,
                           FIELD(train.finetune_weight_decay)));
  // eval
  e.push_back(enum_entry("eval.pooling", "cls | mean | cls_mean", false, FIELD(eval.pooling),
                         [](const std::string& s) { return parse_pooling(s); }));
  e.push_back(size_entry("eval.seeds", "repeats for mean and std", false, FIELD(eval.seeds)));
  e.push_back(u64_entry("eval.seed", "first evaluation seed", false, FIELD(eval.seed)));
  e.push_back(size_entry("eval.probe_epochs", "linear-probe epochs", false, FIELD(eval.probe_epochs)));
  e.push_back(double_entry("eval.probe_lr", "linear-probe lr", false, FIELD(eval.probe_lr)));
  e.push_back(double_entry("eval.probe_weight_decay", "linear-probe weight decay", false,
                           FIELD(eval.probe_weight_decay)));
  e.push_back(size_entry("eval.probe_batch", "linear-probe batch", false, FIELD(eval.probe_batch)));
  e.push_back(bool_entry("eval.standardize", "standardize probe features", false, FIELD(eval.standardize)));
  e.push_back(size_entry("eval.finetune_epochs", "fine-tuning epochs", false, FIELD(eval.finetune_epochs)));
  e.push_back(size_entry("eval.finetune_warmup_epochs", "fine-tuning warm-up epochs", false,
                         FIELD(eval.finetune_warmup_epochs)));
  e.push_back(size_entry("eval.finetune_batch", "fine-tuning batch", false, FIELD(eval.finetune_batch)));
  e.push_back(size_entry("eval.knn_max_k", "largest k of the mismatch curve", false, FIELD(eval.knn_max_k)));
  e.push_back(size_entry("eval.knn_per_class", "balanced subsample per class, 0 = all", false,
                         FIELD(eval.knn_per_class)));
  // data
  e.push_back(string_entry("data.root", "dataset folder, empty = synthetic", false, FIELD(data.root)));
  e.push_back({{"data.ignore_classes", "comma-separated class directories to skip", false},
               [](RunConfig& c, std::string_view v) { c.data.ignore_classes = parse_list(v); },
               [](const RunConfig& c) { return join_list(c.data.ignore_classes); }});
  e.push_back(size_entry("data.synthetic.num_classes", "synthetic classes", false, FIELD(data.synthetic.num_classes)));
  e.push_back(size_entry("data.synthetic.images_per_class", "synthetic images per class", false,
                         FIELD(data.synthetic.images_per_class)));
  e.push_back(double_entry("data.synthetic.base_frequency", "grating cycles per image", false,
                           FIELD(data.synthetic.base_frequency)));
  e.push_back(double_entry("data.synthetic.frequency_step", "extra cycles for odd classes", false,
                           FIELD(data.synthetic.frequency_step)));
  e.push_back(double_entry("data.synthetic.orientation_jitter", "orientation jitter in radians", false,
                           FIELD(data.synthetic.orientation_jitter)));
  e.push_back(double_entry("data.synthetic.phase_jitter", "grating phase spread (1 = uniform)", false,
                           FIELD(data.synthetic.phase_jitter)));
  e.push_back(double_entry("data.synthetic.blob_density", "mean blobs for class 0", false,
                           FIELD(data.synthetic.blob_density)));
  e.push_back(double_entry("data.synthetic.blob_density_step", "extra mean blobs per class", false,
                           FIELD(data.synthetic.blob_density_step)));
  e.push_back(double_entry("data.synthetic.noise", "uniform-noise mixing weight", false, FIELD(data.synthetic.noise)));
  e.push_back(u64_entry("data.synthetic.seed", "generator seed", false, FIELD(data.synthetic.seed)));
  e.push_back(double_entry("data.synthetic.train_fraction", "train share of each class", false,
                           FIELD(data.synthetic.train_fraction)));
  // output
  e.push_back(string_entry("output.dir", "run directory parent", false, FIELD(output_dir)));
  e.push_back(string_entry("output.run_name", "run directory name", false, FIELD(run_name)));
  return e;
}

#undef FIELD

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = build_entries();
  return table;
}

const Entry* find_entry(std::string_view key) {
  for (const auto& e : entries())
    if (e.info.key == key) return &e;
  return nullptr;
}

struct Assignment {
  std::string key;
  std::string value;
  std::string where;
};

std::pair<std::string, std::string> split_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
  const auto key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::string(key), std::string(trim(line.substr(eq + 1)))};
}

RunConfig resolve(const std::vector<Assignment>& assignments) {
  std::vector<std::string> unknown;
  for (const auto& a : assignments)
    if (!find_entry(a.key)) unknown.push_back(a.key + " (" + a.where + ")");
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
  RunConfig cfg;
  auto apply = [&](const Assignment& a) {
    try {
      find_entry(a.key)->set(cfg, a.value);
    } catch (const Error& e) {
      throw ConfigError(a.where + ": " + a.key + ": " + e.what());
    }
  };
  // The last preset assignment wins and is applied before everything else.
  const Assignment* preset = nullptr;
  for (const auto& a : assignments)
    if (a.key == "train.preset") preset = &a;
  if (preset) {
    apply(*preset);
    cfg.train.apply_preset(cfg.train.preset);
  }
  for (const auto& a : assignments)
    if (&a != preset && a.key != "train.preset") apply(a);
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

void add_overrides(std::vector<Assignment>& out, std::span<const std::string> overrides) {
  for (const auto& o : overrides) {
    auto [k, v] = split_assignment(o, "override '" + o + "'");
    out.push_back({std::move(k), std::move(v), "command line"});
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  eval.validate();
  if (data.root.empty()) {
    if (model.channels != 3) throw ConfigError("the synthetic generator produces 3-channel images");
    if (data.synthetic.num_classes < 2) throw ConfigError("data.synthetic.num_classes must be >= 2");
    if (data.synthetic.images_per_class < 2) throw ConfigError("data.synthetic.images_per_class must be >= 2");
    if (!(data.synthetic.noise >= 0.0 && data.synthetic.noise <= 1.0)) {
      throw ConfigError("data.synthetic.noise must be in [0, 1]");
    }
    if (!(data.synthetic.phase_jitter >= 0.0 && data.synthetic.phase_jitter <= 1.0)) {
      throw ConfigError("data.synthetic.phase_jitter must be in [0, 1]");
    }
    if (!(data.synthetic.train_fraction > 0.0 && data.synthetic.train_fraction < 1.0)) {
      throw ConfigError("data.synthetic.train_fraction must be in (0, 1)");
    }
  }
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.info);
    return out;
  }();
  return keys;
}

std::string get_value(const RunConfig& cfg, std::string_view key) {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key: " + std::string(key));
  return e->get(cfg);
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key: " + std::string(key));
  try {
    e->set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(std::string(key) + ": " + err.what());
  }
}

RunConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
  std::vector<Assignment> assignments;
  std::optional<std::string> version;
  std::map<std::string, std::size_t> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    std::string_view line = raw;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    auto [key, value] = split_assignment(line, where);
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
    }
    if (key == "schema_version") {
      version = value;
      continue;
    }
    assignments.push_back({std::move(key), std::move(value), where});
  }
  if (!version) throw ConfigError("config file lacks schema_version");
  if (*version != std::to_string(kSchemaVersion)) {
    throw ConfigError("config schema_version " + *version + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  add_overrides(assignments, overrides);
  return resolve(assignments);
}

RunConfig default_config(std::span<const std::string> overrides) {
  std::vector<Assignment> assignments;
  add_overrides(assignments, overrides);
  return resolve(assignments);
}

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out = "schema_version = " + std::to_string(kSchemaVersion) + "\n";
  std::string section;
  for (const auto& e : entries()) {
    const std::string head = e.info.key.substr(0, e.info.key.find('.'));
    if (head != section) {
      out += "\n";
      section = head;
    }
    out += e.info.key + " = " + e.get(cfg) + "\n";
  }
  return out;
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  j["schema_version"] = kSchemaVersion;
  for (const auto& e : entries()) j[e.info.key] = e.get(cfg);
  return j;
}

nlohmann::json section_json(const RunConfig& cfg, std::string_view prefix) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : entries())
    if (e.info.key.starts_with(prefix)) j[e.info.key] = e.get(cfg);
  return j;
}

void apply_section(RunConfig& cfg, const nlohmann::json& section) {
  for (const auto& [key, value] : section.items()) {
    if (!value.is_string()) throw ConfigError("config value for " + key + " is not a string");
    set_value(cfg, key, value.get<std::string>());
  }
}

std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
  RunConfig cfg;
  cfg.model = model;
  cfg.train = train;
  nlohmann::json j = section_json(cfg, "model.");
  j.update(section_json(cfg, "train."));
  const std::string text = j.dump();
  return hex64(fnv1a64(text.data(), text.size()));
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return std::string(buf, ptr);
}

}  // namespace sdmae
