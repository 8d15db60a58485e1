/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "sdmae/checkpoint.hpp"
#include "sdmae/error.hpp"
#include "sdmae/image_io.hpp"
#include "sdmae/seed.hpp"

namespace fs = std::filesystem;

namespace sdmae {
namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<double> to_unit(const Image8& img) {
  std::vector<double> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.data[i] / 255.0;
  return v;
}

// Samples the region [top, top+h) x [left, left+w) onto an out x out grid.
void crop_resize(const double* src, std::size_t size, std::size_t c, double top, double left,
                 double h, double w, double* dst) {
  const double hi = double(size - 1);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = std::clamp(top + (double(y) + 0.5) * h / double(size) - 0.5, 0.0, hi);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, size - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = std::clamp(left + (double(x) + 0.5) * w / double(size) - 0.5, 0.0, hi);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, size - 1);
      const double wx = fx - double(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = src[(y0 * size + x0) * c + k], b = src[(y0 * size + x1) * c + k];
        const double d = src[(y1 * size + x0) * c + k], e = src[(y1 * size + x1) * c + k];
        dst[(y * size + x) * c + k] = (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e);
      }
    }
  }
}

void flip_one(double* img, std::size_t size, std::size_t c) {
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size / 2; ++x)
      for (std::size_t k = 0; k < c; ++k)
        std::swap(img[(y * size + x) * c + k], img[(y * size + size - 1 - x) * c + k]);
}

std::string class_dir_name(std::size_t c, std::size_t num_classes) {
  const int width = num_classes > 10 ? int(std::to_string(num_classes - 1).size()) : 1;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class_%0*zu", width, c);
  return buf;
}

// One synthetic image as 8-bit RGB.
std::vector<std::uint8_t> render_texture(const SyntheticSpec& spec, std::size_t cls, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t s = spec.image_size;
  const double theta = std::numbers::pi * double(cls) / double(spec.num_classes) +
                       spec.orientation_jitter * (2.0 * u01(rng) - 1.0);
  const double freq = spec.base_frequency + spec.frequency_step * double(cls % 2);
  const double phase = std::numbers::pi * spec.phase_jitter * (2.0 * u01(rng) - 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);

  std::poisson_distribution<int> blob_count(spec.blob_density + spec.blob_density_step * double(cls));
  const int nb = blob_count(rng);
  struct Blob { double y, x, r; };
  std::vector<Blob> blobs(static_cast<std::size_t>(nb));
  const double scale = double(s) / 32.0;
  for (auto& b : blobs) {
    b.y = u01(rng) * double(s);
    b.x = u01(rng) * double(s);
    b.r = (1.0 + 1.5 * u01(rng)) * scale;
  }

  constexpr double kBackground[3] = {0.92, 0.70, 0.82};
  constexpr double kStroma[3] = {0.75, 0.38, 0.58};
  constexpr double kNucleus[3] = {0.30, 0.18, 0.50};
  std::vector<std::uint8_t> out(s * s * 3);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double proj = (double(x) * ct + double(y) * st) / double(s);
      const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * proj + phase);
      double stain = 0.0;
      for (const auto& b : blobs) {
        const double dy = double(y) + 0.5 - b.y, dx = double(x) + 0.5 - b.x;
        stain += std::exp(-(dy * dy + dx * dx) / (2.0 * b.r * b.r));
      }
      stain = std::min(stain, 1.0);
      for (std::size_t k = 0; k < 3; ++k) {
        double v = (1.0 - t) * kBackground[k] + t * kStroma[k];
        v = (1.0 - stain) * v + stain * kNucleus[k];
        v = (1.0 - spec.noise) * v + spec.noise * u01(rng);
        out[(y * s + x) * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return out;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ParameterError("synthetic: num_classes must be >= 2");
  if (spec.images_per_class < 2) throw ParameterError("synthetic: images_per_class must be >= 2");
  if (spec.image_size < 2) throw ParameterError("synthetic: image_size must be >= 2");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) throw ParameterError("synthetic: noise must be in [0, 1]");
  if (!(spec.phase_jitter >= 0.0 && spec.phase_jitter <= 1.0)) {
    throw ParameterError("synthetic: phase_jitter must be in [0, 1]");
  }
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ParameterError("synthetic: train_fraction must be in (0, 1)");
  }
}

struct SplitPlan {
  std::vector<std::pair<std::size_t, std::size_t>> train, val;  // (class, image index)
};

SplitPlan plan_split(const SyntheticSpec& spec) {
  SplitPlan plan;
  const auto n_train = static_cast<std::size_t>(std::lround(spec.train_fraction * double(spec.images_per_class)));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::vector<std::size_t> ids(spec.images_per_class);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    std::mt19937_64 rng(mix_seed(spec.seed, kStreamOrder, c));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::sort(ids.begin(), ids.begin() + std::ptrdiff_t(n_train));
    std::sort(ids.begin() + std::ptrdiff_t(n_train), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) (i < n_train ? plan.train : plan.val).emplace_back(c, ids[i]);
  }
  return plan;
}

}  // namespace

ImageBatch ImageSet::batch(std::span<const std::size_t> index) const {
  const std::size_t per = pixels.size() / std::max<std::size_t>(size(), 1);
  Shape shape = pixels.shape();
  shape[0] = index.size();
  Tensor out(shape, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= size()) throw ParameterError("image index out of range");
    std::copy_n(pixels.data() + index[i] * per, per, out.data() + i * per);
  }
  return ImageBatch{std::move(out)};
}

std::vector<int> ImageSet::labels_of(std::span<const std::size_t> index) const {
  std::vector<int> out;
  out.reserve(index.size());
  for (std::size_t i : index) out.push_back(labels.at(i));
  return out;
}

const char* to_string(Split s) { return s == Split::kTrain ? "train" : "val"; }

DatasetManifest scan_folder(const fs::path& root, const ScanOptions& opts) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  m.image_size = opts.image_size;

  std::set<std::string> classes;
  for (const char* split : {"train", "val"})
    for (const auto& name : sorted_subdirs(root / split))
      if (std::find(opts.ignore_classes.begin(), opts.ignore_classes.end(), name) == opts.ignore_classes.end())
        classes.insert(name);
  m.class_names.assign(classes.begin(), classes.end());

  std::size_t common_size = opts.image_size;
  for (Split split : {Split::kTrain, Split::kVal}) {
    auto& entries = split == Split::kTrain ? m.train : m.val;
    for (std::size_t c = 0; c < m.class_names.size(); ++c) {
      const fs::path dir = root / to_string(split) / m.class_names[c];
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) m.warnings.push_back("empty class directory: " + dir.string());
      for (const auto& f : files) {
        const std::string rel = fs::relative(f, root).generic_string();
        try {
          const Image8 img = read_image(f);
          if (img.width != img.height) throw DataError("image is not square");
          if (common_size != 0 && img.width != common_size) {
            throw DataError("image is " + std::to_string(img.width) + " px, expected " +
                            std::to_string(common_size));
          }
          if (common_size == 0) common_size = img.width;  // first accepted image fixes the size
          entries.push_back({rel, int(c), file_hash(f)});
        } catch (const Error& e) {
          m.errors.push_back(rel + ": " + e.what());
        }
      }
    }
  }
  for (const auto& w : m.warnings) spdlog::warn("{}", w);
  for (const auto& e : m.errors) spdlog::warn("rejected {}", e);
  if (m.train.empty() && m.val.empty()) throw DataError("no usable images under " + root.string());
  m.image_size = common_size;

  std::map<std::string, std::string> train_hashes;
  for (const auto& e : m.train) train_hashes.emplace(e.hash, e.path);
  for (const auto& e : m.val) {
    auto it = train_hashes.find(e.hash);
    if (it != train_hashes.end()) {
      throw DataError("train/val leakage: " + e.path + " duplicates " + it->second);
    }
  }

  std::string digest;
  for (Split split : {Split::kTrain, Split::kVal})
    for (const auto& e : m.entries(split))
      digest += std::string(to_string(split)) + "|" + e.path + "|" + std::to_string(e.label) + "|" + e.hash + "\n";
  for (const auto& c : m.class_names) digest += c + "\n";
  m.checksum = hex64(fnv1a64(digest.data(), digest.size()));
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  auto entries = [](const std::vector<ManifestEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"path", e.path}, {"label", e.label}, {"hash", e.hash}});
    return a;
  };
  nlohmann::json j = {{"root", m.root.generic_string()}, {"class_names", m.class_names},
                      {"train", entries(m.train)},       {"val", entries(m.val)},
                      {"image_size", m.image_size},      {"checksum", m.checksum},
                      {"errors", m.errors},              {"warnings", m.warnings}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const char* split : {"train", "val"}) {
      auto& dst = std::string(split) == "train" ? m.train : m.val;
      for (const auto& e : j.at(split)) {
        dst.push_back({e.at("path").get<std::string>(), e.at("label").get<int>(), e.at("hash").get<std::string>()});
      }
    }
    m.image_size = j.at("image_size").get<std::size_t>();
    m.checksum = j.at("checksum").get<std::string>();
    m.errors = j.value("errors", std::vector<std::string>{});
    m.warnings = j.value("warnings", std::vector<std::string>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

ImageBatch flip_horizontal(const ImageBatch& images) {
  validate(images);
  ImageBatch out = images;
  const std::size_t s = images.height(), c = images.channels(), per = s * s * c;
  for (std::size_t b = 0; b < images.batch(); ++b) flip_one(out.pixels.data() + b * per, s, c);
  return out;
}

ImageBatch augment(const ImageBatch& images, const AugmentOptions& opts, std::uint64_t seed) {
  validate(images);
  if (!(opts.min_scale > 0.0 && opts.min_scale <= opts.max_scale && opts.max_scale <= 1.0)) {
    throw ParameterError("augment: need 0 < min_scale <= max_scale <= 1");
  }
  const std::size_t s = images.height(), c = images.channels(), per = s * s * c;
  ImageBatch out{Tensor(images.pixels.shape(), 0.0)};
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (std::size_t b = 0; b < images.batch(); ++b) {
    std::mt19937_64 rng(mix_seed(seed, kStreamAugment, b));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double top = 0, left = 0, h = double(s), w = double(s);
    if (opts.random_crop) {
      for (int attempt = 0; attempt < 10; ++attempt) {
        const double area = (opts.min_scale + (opts.max_scale - opts.min_scale) * u01(rng)) * double(s * s);
        const double ratio = std::exp(log_lo + (log_hi - log_lo) * u01(rng));
        const double cw = std::sqrt(area * ratio), ch = std::sqrt(area / ratio);
        if (cw <= double(s) && ch <= double(s)) {
          left = (double(s) - cw) * u01(rng);
          top = (double(s) - ch) * u01(rng);
          w = cw;
          h = ch;
          break;
        }
      }
    }
    double* dst = out.pixels.data() + b * per;
    crop_resize(images.pixels.data() + b * per, s, c, top, left, h, w, dst);
    if (u01(rng) < opts.flip_probability) flip_one(dst, s, c);
  }
  return out;
}

LabeledBatch load_batch(const DatasetManifest& m, Split split, std::span<const std::size_t> index,
                        const LoadOptions& opts) {
  const auto& entries = m.entries(split);
  const std::size_t size = opts.image_size ? opts.image_size : m.image_size;
  if (size == 0) throw ConfigError("load_batch: image size is not set");
  if (index.empty()) throw ParameterError("load_batch: empty index list");
  for (std::size_t i : index)
    if (i >= entries.size()) throw ParameterError("load_batch: index out of range");

  const std::size_t per = size * size * 3;
  LabeledBatch out{ImageBatch{Tensor({index.size(), size, size, 3}, 0.0)}, {}};
  std::vector<std::exception_ptr> failures(index.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(index.size()); ++ii) {
    const auto i = std::size_t(ii);
    try {
      const fs::path path = m.root / entries[index[i]].path;
      if (!fs::exists(path)) throw DataError("missing file at load: " + path.string());
      const Image8 img = read_image(path);
      if (img.width != img.height) throw DataError("image is not square: " + path.string());
      const std::vector<double> px = resize_bilinear(to_unit(img), img.height, img.width, 3, size, size);
      std::copy(px.begin(), px.end(), out.images.pixels.data() + i * per);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);
  for (std::size_t i : index) out.labels.push_back(entries[i].label);
  if (opts.augment) out.images = augment(out.images, opts.augmentation, opts.seed);
  return out;
}

ImageSet load_split(const DatasetManifest& m, Split split, std::size_t image_size) {
  const auto& entries = m.entries(split);
  if (entries.empty()) throw DataError(std::string("split '") + to_string(split) + "' is empty");
  std::vector<std::size_t> all(entries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  LoadOptions opts;
  opts.image_size = image_size;
  LabeledBatch b = load_batch(m, split, all, opts);
  return ImageSet{std::move(b.images.pixels), std::move(b.labels), m.class_names};
}

SyntheticDataset synthesize(const SyntheticSpec& spec) {
  validate_spec(spec);
  const SplitPlan plan = plan_split(spec);
  const std::size_t s = spec.image_size, per = s * s * 3;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.num_classes; ++c) names.push_back(class_dir_name(c, spec.num_classes));

  auto build = [&](const std::vector<std::pair<std::size_t, std::size_t>>& items) {
    ImageSet set{Tensor({items.size(), s, s, 3}, 0.0), std::vector<int>(items.size()), names};
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(items.size()); ++ii) {
      const auto i = std::size_t(ii);
      const auto [cls, idx] = items[i];
      const auto bytes = render_texture(spec, cls, mix_seed(spec.seed, cls, idx));
      double* dst = set.pixels.data() + i * per;
      for (std::size_t k = 0; k < per; ++k) dst[k] = bytes[k] / 255.0;
      set.labels[i] = int(cls);
    }
    return set;
  };
  return SyntheticDataset{build(plan.train), build(plan.val)};
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  validate_spec(spec);
  const SplitPlan plan = plan_split(spec);
  std::error_code ec;
  for (const auto& [split, items] : {std::pair{"train", &plan.train}, std::pair{"val", &plan.val}}) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      fs::create_directories(out / split / class_dir_name(c, spec.num_classes), ec);
      if (ec) throw IoError("cannot create " + (out / split).string() + ": " + ec.message());
    }
    std::vector<std::exception_ptr> failures(items->size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(items->size()); ++ii) {
      const auto [cls, idx] = (*items)[std::size_t(ii)];
      try {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05zu.png", idx);
        Image8 img{spec.image_size, spec.image_size, 3, render_texture(spec, cls, mix_seed(spec.seed, cls, idx))};
        write_png(out / split / class_dir_name(cls, spec.num_classes) / name, img);
      } catch (...) {
        failures[std::size_t(ii)] = std::current_exception();
      }
    }
    for (const auto& f : failures)
      if (f) std::rethrow_exception(f);
  }
  ScanOptions opts;
  opts.image_size = spec.image_size;
  DatasetManifest m = scan_folder(out, opts);
  save_manifest(m, out / "manifest.json");
  return m;
}

std::string dataset_checksum(const ImageSet& set) {
  std::uint64_t h = fnv1a64(set.pixels.data(), set.pixels.size() * sizeof(double));
  h = fnv1a64(set.labels.data(), set.labels.size() * sizeof(int), h);
  return hex64(h);
}

std::vector<std::size_t> balanced_subsample(std::span<const int> labels, std::size_t per_class,
                                            std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> out;
  for (auto& [label, ids] : by_class) {
    std::mt19937_64 rng(mix_seed(seed, kStreamSubsample, static_cast<std::uint64_t>(label)));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(std::min(per_class, ids.size()));
    out.insert(out.end(), ids.begin(), ids.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace sdmae
