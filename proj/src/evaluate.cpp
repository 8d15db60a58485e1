/*
 * Copyright (c) 2026 sdmae contributors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "sdmae/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "sdmae/config.hpp"
#include "sdmae/error.hpp"
#include "sdmae/image_io.hpp"
#include "sdmae/kernels.hpp"
#include "sdmae/optim.hpp"
#include "sdmae/seed.hpp"

namespace fs = std::filesystem;

namespace sdmae {
namespace {

Tensor l2_normalized_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.data() + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += r[j] * r[j];
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < d; ++j) r[j] *= inv;
  }
  return out;
}

double dot(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
  return s;
}

// Closer first: larger cosine similarity, then lower index.
struct Neighbour {
  double sim;
  std::size_t index;
  bool operator<(const Neighbour& o) const { return sim != o.sim ? sim > o.sim : index < o.index; }
};

std::vector<double> rates_from_counts(const std::vector<std::size_t>& counts, std::size_t n) {
  std::vector<double> out(counts.size());
  for (std::size_t k = 1; k <= counts.size(); ++k) out[k - 1] = double(counts[k - 1]) / double(n * k);
  return out;
}

void check_knn_args(const EmbeddingTable& t, std::size_t max_k) {
  t.validate();
  if (max_k == 0) throw ParameterError("knn: k must be >= 1");
  if (max_k >= t.labels.size()) {
    throw ParameterError("knn: k = " + std::to_string(max_k) + " needs more than " +
                         std::to_string(t.labels.size()) + " items");
  }
}


Tensor pool(const Tensor& cls, const Tensor& tokens, std::size_t b, std::size_t n, Pooling pooling) {
  const std::size_t w = cls.cols();
  const std::size_t out_w = pooling == Pooling::kClsMean ? 2 * w : w;
  Tensor out = Tensor::matrix(b, out_w);
  for (std::size_t i = 0; i < b; ++i) {
    double* o = out.data() + i * out_w;
    if (pooling != Pooling::kMean) std::copy_n(cls.data() + i * w, w, o);
    if (pooling != Pooling::kCls) {
      double* m = o + (pooling == Pooling::kClsMean ? w : 0);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < w; ++j) m[j] += tokens.data()[(i * n + t) * w + j];
      for (std::size_t j = 0; j < w; ++j) m[j] /= double(n);
    }
  }
  return out;
}

// d(pooled) -> (d tokens (B*N, w), d cls (B, w)).
std::pair<Tensor, Tensor> unpool(const Tensor& d_pooled, std::size_t b, std::size_t n, std::size_t w,
                                 Pooling pooling) {
  Tensor d_tokens = Tensor::matrix(b * n, w), d_cls = Tensor::matrix(b, w);
  const std::size_t in_w = d_pooled.cols();
  for (std::size_t i = 0; i < b; ++i) {
    const double* g = d_pooled.data() + i * in_w;
    if (pooling != Pooling::kMean) std::copy_n(g, w, d_cls.data() + i * w);
    if (pooling != Pooling::kCls) {
      const double* m = g + (pooling == Pooling::kClsMean ? w : 0);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < w; ++j) d_tokens.data()[(i * n + t) * w + j] = m[j] / double(n);
    }
  }
  return {std::move(d_tokens), std::move(d_cls)};
}

// Softmax over rows in place; returns mean cross-entropy against labels.
double softmax_cross_entropy(Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  kernels::softmax_rows(logits.span(), n, c, 1.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss -= std::log(std::max(logits.at(i, std::size_t(labels[i])), kLogClamp));
  return loss / double(n);
}

std::vector<int> argmax_rows(const Tensor& x) {
  std::vector<int> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    out[i] = int(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

SeedResult score(std::span<const int> truth, const Tensor& probs, std::size_t classes, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  const std::vector<int> pred = argmax_rows(probs);
  r.confusion = confusion_matrix(truth, pred, classes);
  r.accuracy = accuracy(r.confusion);
  r.macro_f1 = macro_f1(r.confusion);
  if (classes == 2) {
    std::vector<double> s(truth.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = probs.at(i, 1);
    bool both = std::find(truth.begin(), truth.end(), 0) != truth.end() &&
                std::find(truth.begin(), truth.end(), 1) != truth.end();
    if (both) r.auc = binary_auc(s, truth);
  }
  return r;
}

std::vector<std::size_t> class_counts(std::span<const int> labels, std::size_t classes) {
  std::vector<std::size_t> out(classes, 0);
  for (int l : labels) ++out.at(std::size_t(l));
  return out;
}

}  // namespace

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::kCls: return "cls";
    case Pooling::kMean: return "mean";
    case Pooling::kClsMean: return "cls_mean";
  }
  return "cls";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "cls") return Pooling::kCls;
  if (name == "mean") return Pooling::kMean;
  if (name == "cls_mean") return Pooling::kClsMean;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (expected cls, mean, cls_mean)");
}

void EvalConfig::validate() const {
  if (seeds == 0) throw ConfigError("eval.seeds must be >= 1");
  if (probe_batch == 0 || finetune_batch == 0) throw ConfigError("evaluation batch sizes must be >= 1");
  if (!(probe_lr >= 0.0 && probe_weight_decay >= 0.0)) throw ConfigError("probe lr and weight decay must be >= 0");
  if (finetune_warmup_epochs > finetune_epochs) throw ConfigError("eval.finetune_warmup_epochs exceeds epochs");
  if (knn_max_k == 0) throw ConfigError("eval.knn_max_k must be >= 1");
}

// -------------------------------------------------------------- metrics

Confusion confusion_matrix(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw DimensionError("confusion: truth and prediction lengths differ");
  Confusion c(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || std::size_t(truth[i]) >= classes || std::size_t(pred[i]) >= classes) {
      throw ParameterError("confusion: label out of range");
    }
    ++c[std::size_t(truth[i])][std::size_t(pred[i])];
  }
  return c;
}

double accuracy(const Confusion& c) {
  std::size_t hit = 0, total = 0;
  for (std::size_t t = 0; t < c.size(); ++t)
    for (std::size_t p = 0; p < c.size(); ++p) {
      total += c[t][p];
      if (t == p) hit += c[t][p];
    }
  return total ? double(hit) / double(total) : 0.0;
}

double macro_f1(const Confusion& c) {
  if (c.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    std::size_t tp = c[k][k], fp = 0, fn = 0;
    for (std::size_t j = 0; j < c.size(); ++j) {
      if (j == k) continue;
      fp += c[j][k];
      fn += c[k][j];
    }
    const std::size_t denom = 2 * tp + fp + fn;
    sum += denom ? 2.0 * double(tp) / double(denom) : 0.0;
  }
  return sum / double(c.size());
}

double binary_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels lengths differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos_rank = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++pos;
      pos_rank += rank[i];
    } else if (labels[i] == 0) {
      ++neg;
    } else {
      throw ParameterError("auc: labels must be 0 or 1");
    }
  }
  if (!pos || !neg) throw ParameterError("auc needs both classes present");
  return (pos_rank - double(pos) * double(pos + 1) / 2.0) / (double(pos) * double(neg));
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / double(values.size() - 1));
  }
  return out;
}

void EvalReport::summarize() {
  std::vector<double> acc, f1, auc_values;
  for (const auto& r : runs) {
    acc.push_back(r.accuracy);
    f1.push_back(r.macro_f1);
    if (r.auc) auc_values.push_back(*r.auc);
  }
  accuracy = mean_std(acc);
  macro_f1 = mean_std(f1);
  if (!auc_values.empty() && auc_values.size() == runs.size()) auc = mean_std(auc_values);
  else auc.reset();
}

void write_report_csv(const EvalReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "task,source,row,seed,accuracy,macro_f1,auc\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& run : r.runs) {
    out << r.task << "," << r.source << ",run," << run.seed << "," << format_double(run.accuracy) << ","
        << format_double(run.macro_f1) << "," << opt(run.auc) << "\n";
  }
  out << r.task << "," << r.source << ",mean,," << format_double(r.accuracy.mean) << ","
      << format_double(r.macro_f1.mean) << "," << (r.auc ? format_double(r.auc->mean) : "") << "\n";
  out << r.task << "," << r.source << ",std,," << format_double(r.accuracy.std) << ","
      << format_double(r.macro_f1.std) << "," << (r.auc ? format_double(r.auc->std) : "") << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

void write_report_json(const EvalReport& r, const fs::path& path) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json j = {{"seed", run.seed},
                        {"accuracy", run.accuracy},
                        {"macro_f1", run.macro_f1},
                        {"confusion", run.confusion}};
    if (run.auc) j["auc"] = *run.auc;
    runs.push_back(j);
  }
  auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.std}}; };
  nlohmann::json j = {{"task", r.task},
                      {"source", r.source},
                      {"class_names", r.class_names},
                      {"class_counts", r.class_counts},
                      {"runs", runs},
                      {"accuracy", ms(r.accuracy)},
                      {"macro_f1", ms(r.macro_f1)}};
  if (r.auc) j["auc"] = ms(*r.auc);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

// ------------------------------------------------------------- features

Tensor extract_features(Encoder& encoder, const ImageSet& data, std::size_t patch_size, Pooling pooling,
                        std::size_t batch) {
  if (data.size() == 0) throw DataError("no images to embed");
  const std::size_t n_img = data.size();
  Tensor out;
  for (std::size_t lo = 0; lo < n_img; lo += batch) {
    const std::size_t hi = std::min(n_img, lo + batch);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const PatchSequence seq = patchify(data.batch(idx), patch_size);
    const std::size_t b = seq.batch(), n = seq.num_patches();
    const MaskPlan plan = full_plan(b, n);
    const Tensor tokens = encoder.encode(encoder.embed_visible(seq, plan), b, n);
    const Tensor pooled = pool(encoder.class_features(), tokens, b, n, pooling);
    if (out.empty()) out = Tensor::matrix(n_img, pooled.cols());
    std::copy_n(pooled.data(), pooled.size(), out.data() + lo * pooled.cols());
  }
  return out;
}

void EmbeddingTable::validate(std::size_t num_classes) const {
  if (vectors.rank() != 2) throw DimensionError("embedding vectors must be a matrix");
  if (vectors.rows() != labels.size()) throw DimensionError("embedding rows and labels differ in count");
  if (labels.size() < 2) throw ParameterError("embedding table needs at least 2 items");
  if (!vectors.all_finite()) throw NumericError("embedding table has non-finite entries");
  for (int l : labels) {
    if (l < 0 || (num_classes && std::size_t(l) >= num_classes)) {
      throw ParameterError("embedding label " + std::to_string(l) + " out of range");
    }
  }
}

void save_embeddings(const EmbeddingTable& t, const fs::path& path) {
  t.validate();
  Archive a;
  a.fingerprint = "embeddings";
  a.meta = {{"kind", "embeddings"}, {"source", t.source}};
  a.arrays.push_back(ArchiveArray::from_tensor("vectors", t.vectors));
  a.arrays.push_back(ArchiveArray::from_ints("labels", std::vector<std::int64_t>(t.labels.begin(), t.labels.end())));
  save_archive(a, path);
}

EmbeddingTable load_embeddings(const fs::path& path) {
  const Archive a = load_archive(path);
  EmbeddingTable t;
  t.vectors = a.get("vectors").tensor();
  const auto& labels = a.get("labels");
  if (!labels.integer) throw CheckpointError(CheckpointErrorCode::kCorruptData, "labels must be integers");
  t.labels.assign(labels.i64.begin(), labels.i64.end());
  t.source = a.meta.value("source", std::string());
  t.validate();
  return t;
}

std::vector<double> knn_mismatch_rate(const EmbeddingTable& table, std::size_t max_k) {
  check_knn_args(table, max_k);
  const Tensor x = l2_normalized_rows(table.vectors);
  const std::size_t n = x.rows(), d = x.cols();
  // counts[i][k-1]: mismatches among item i's first k neighbours.
  std::vector<std::size_t> per_item(n * max_k, 0);
#pragma omp parallel
  {
    std::vector<Neighbour> cand;
    cand.reserve(n);
#pragma omp for schedule(dynamic, 8)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(n); ++ii) {
      const auto i = std::size_t(ii);
      cand.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) cand.push_back({dot(x.data() + i * d, x.data() + j * d, d), j});
      std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(max_k), cand.end());
      std::size_t miss = 0;
      for (std::size_t k = 0; k < max_k; ++k) {
        miss += table.labels[cand[k].index] != table.labels[i];
        per_item[i * max_k + k] = miss;
      }
    }
  }
  std::vector<std::size_t> counts(max_k, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < max_k; ++k) counts[k] += per_item[i * max_k + k];
  return rates_from_counts(counts, n);
}

std::vector<double> knn_mismatch_rate_reference(const EmbeddingTable& table, std::size_t max_k) {
  check_knn_args(table, max_k);
  const Tensor x = l2_normalized_rows(table.vectors);
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sim[i * n + j] = dot(x.data() + i * d, x.data() + j * d, d);
  std::vector<std::size_t> counts(max_k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Neighbour> all;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) all.push_back({sim[i * n + j], j});
    std::sort(all.begin(), all.end());
    std::size_t miss = 0;
    for (std::size_t k = 0; k < max_k; ++k) {
      miss += table.labels[all[k].index] != table.labels[i];
      counts[k] += miss;
    }
  }
  return rates_from_counts(counts, n);
}

// ---------------------------------------------------------- classifiers

ProbeResult train_probe(const Tensor& train_x, std::span<const int> train_y, const Tensor& test_x,
                        std::span<const int> test_y, std::size_t classes, const EvalConfig& cfg,
                        std::uint64_t seed) {
  const std::size_t n = train_x.rows(), d = train_x.cols();
  if (n == 0 || train_y.size() != n) throw DimensionError("probe: train features and labels differ in count");
  if (test_x.cols() != d || test_y.size() != test_x.rows()) throw DimensionError("probe: test features malformed");
  if (classes < 2) throw ConfigError("probe needs at least 2 classes");

  Tensor xtr = train_x, xte = test_x;
  if (cfg.standardize) {
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += train_x.at(i, j);
    for (auto& m : mu) m /= double(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) sd[j] += (train_x.at(i, j) - mu[j]) * (train_x.at(i, j) - mu[j]);
    for (auto& s : sd) s = std::max(std::sqrt(s / double(n)), 1e-8);
    for (Tensor* t : {&xtr, &xte})
      for (std::size_t i = 0; i < t->rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) t->at(i, j) = (t->at(i, j) - mu[j]) / sd[j];
  }

  nn::Param weight("probe.weight", {classes, d});
  nn::Param bias("probe.bias", {classes}, false);
  const std::vector<std::size_t> counts = class_counts(train_y, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    bias.value[c] = counts[c] ? std::log(double(counts[c]) / double(n)) : -30.0;
  }

  AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, cfg.probe_weight_decay});
  const std::size_t batch = std::min(cfg.probe_batch, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total = cfg.probe_epochs * steps_per_epoch;
  std::mt19937_64 rng(mix_seed(seed, kStreamOrder));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::ParamRefs params = {&weight, &bias};
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.probe_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += batch) {
      const std::size_t hi = std::min(n, lo + batch), b = hi - lo;
      const std::span<const std::size_t> idx(order.data() + lo, b);
      const Tensor xb = gather_rows(xtr, idx);
      std::vector<int> yb(b);
      for (std::size_t i = 0; i < b; ++i) yb[i] = train_y[idx[i]];
      Tensor logits = Tensor::matrix(b, classes);
      kernels::gemm_nt(xb.span(), weight.value.span(), logits.span(), {b, classes, d}, false);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < classes; ++c) logits.at(i, c) += bias.value[c];
      softmax_cross_entropy(logits, yb);
      for (std::size_t i = 0; i < b; ++i) {
        logits.at(i, std::size_t(yb[i])) -= 1.0;
        for (std::size_t c = 0; c < classes; ++c) logits.at(i, c) /= double(b);
      }
      kernels::gemm_tn(logits.span(), xb.span(), weight.grad.span(), {classes, d, b}, false);
      bias.grad.fill(0.0);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < classes; ++c) bias.grad[c] += logits.at(i, c);
      opt.step(params, lr_at(step, total, 0, cfg.probe_lr));
      ++step;
    }
  }

  Tensor probs = Tensor::matrix(xte.rows(), classes);
  if (xte.rows()) {
    kernels::gemm_nt(xte.span(), weight.value.span(), probs.span(), {xte.rows(), classes, d}, false);
    for (std::size_t i = 0; i < xte.rows(); ++i)
      for (std::size_t c = 0; c < classes; ++c) probs.at(i, c) += bias.value[c];
    kernels::softmax_rows(probs.span(), xte.rows(), classes, 1.0);
  }
  ProbeResult out;
  out.metrics = score(test_y, probs, classes, seed);
  out.predictions = argmax_rows(probs);
  out.weight = weight.value;
  out.bias = bias.value.values();
  return out;
}

void check_compatible(const ModelConfig& model_cfg, const ImageSet& data) {
  if (data.pixels.rank() != 4 || data.image_size() != model_cfg.image_size ||
      data.pixels.dim(2) != model_cfg.image_size || data.pixels.dim(3) != model_cfg.channels) {
    throw ConfigError("data geometry " + shape_string(data.pixels.shape()) + " does not match the checkpoint (" +
                      std::to_string(model_cfg.image_size) + " px, " + std::to_string(model_cfg.channels) +
                      " channels)");
  }
  if (data.num_classes() < 2) throw ConfigError("evaluation needs at least 2 classes");
  for (int l : data.labels) {
    if (l < 0 || std::size_t(l) >= data.num_classes()) {
      throw ConfigError("label " + std::to_string(l) + " outside the " + std::to_string(data.num_classes()) +
                        " known classes");
    }
  }
}

namespace {

void check_pair(const ModelConfig& m, const ImageSet& train, const ImageSet& test) {
  check_compatible(m, train);
  check_compatible(m, test);
  if (train.class_names != test.class_names) {
    throw ConfigError("train and test splits have different class lists (" + std::to_string(train.num_classes()) +
                      " vs " + std::to_string(test.num_classes()) + ")");
  }
}

EvalReport new_report(std::string task, const ImageSet& test) {
  EvalReport r;
  r.task = std::move(task);
  r.class_names = test.class_names;
  r.class_counts = class_counts(test.labels, test.num_classes());
  return r;
}

}  // namespace

EvalReport linear_probe(Encoder& encoder, const ModelConfig& model_cfg, const ImageSet& train, const ImageSet& test,
                        const EvalConfig& cfg) {
  cfg.validate();
  check_pair(model_cfg, train, test);
  const Tensor ftr = extract_features(encoder, train, model_cfg.patch_size, cfg.pooling);
  const Tensor fte = extract_features(encoder, test, model_cfg.patch_size, cfg.pooling);
  EvalReport report = new_report("probe", test);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = cfg.seed + s;
    ProbeResult r = train_probe(ftr, train.labels, fte, test.labels, test.num_classes(), cfg, seed);
    spdlog::info("probe seed {}: accuracy {:.4f} macro-F1 {:.4f}", seed, r.metrics.accuracy, r.metrics.macro_f1);
    report.runs.push_back(std::move(r.metrics));
  }
  report.summarize();
  return report;
}

EvalReport finetune(const Archive& checkpoint, const ImageSet& train, const ImageSet& test,
                    const TrainConfig& train_cfg, const EvalConfig& cfg) {
  cfg.validate();
  LoadedModel probe_geometry = load_model(checkpoint);
  const ModelConfig& mcfg = probe_geometry.model_cfg;
  check_pair(mcfg, train, test);
  const std::size_t classes = test.num_classes(), n = train.size();
  EvalReport report = new_report("finetune", test);

  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = cfg.seed + s;
    LoadedModel lm = load_model(checkpoint);
    Encoder& enc = lm.model->encoder();
    const std::size_t w = enc.width();
    nn::Rng rng(mix_seed(seed, kStreamHead));
    const std::size_t feat_dim = cfg.pooling == Pooling::kClsMean ? 2 * w : w;
    // LayerNorm on the pooled vector before the classifier (MAE's fc_norm).
    nn::LayerNorm head_norm("head.norm", feat_dim);
    nn::Linear head("head", feat_dim, classes, rng);
    nn::ParamRefs params;
    enc.collect(params);
    head_norm.collect(params);
    head.collect(params);

    AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, train_cfg.finetune_weight_decay});
    const std::size_t batch = std::min(cfg.finetune_batch, n);
    const std::size_t spe = (n + batch - 1) / batch;
    const std::size_t total = cfg.finetune_epochs * spe, warmup = cfg.finetune_warmup_epochs * spe;
    const double base_lr = train_cfg.scale_lr_by_batch ? train_cfg.finetune_lr * double(batch) / 256.0
                                                       : train_cfg.finetune_lr;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 order_rng(mix_seed(seed, kStreamOrder));
    AugmentOptions aug;
    aug.random_crop = false;
    std::size_t step = 0;
    for (std::size_t e = 0; e < cfg.finetune_epochs; ++e) {
      std::shuffle(order.begin(), order.end(), order_rng);
      double epoch_loss = 0.0;
      for (std::size_t lo = 0; lo < n; lo += batch) {
        const std::size_t hi = std::min(n, lo + batch), b = hi - lo;
        const std::span<const std::size_t> idx(order.data() + lo, b);
        const ImageBatch images = augment(train.batch(idx), aug, mix_seed(seed, kStreamAugment, step));
        const std::vector<int> yb = train.labels_of(idx);
        for (nn::Param* p : params) p->zero_grad();
        const PatchSequence seq = patchify(images, mcfg.patch_size);
        const std::size_t np = seq.num_patches();
        const Tensor tokens = enc.encode(enc.embed_visible(seq, full_plan(b, np)), b, np);
        Tensor logits = head.forward(head_norm.forward(pool(enc.class_features(), tokens, b, np, cfg.pooling)));
        epoch_loss += softmax_cross_entropy(logits, yb);
        for (std::size_t i = 0; i < b; ++i) {
          logits.at(i, std::size_t(yb[i])) -= 1.0;
          for (std::size_t c = 0; c < classes; ++c) logits.at(i, c) /= double(b);
        }
        auto [d_tokens, d_cls] = unpool(head_norm.backward(head.backward(logits)), b, np, w, cfg.pooling);
        enc.backward_embed(enc.backward_encode(d_tokens, cfg.pooling == Pooling::kMean ? nullptr : &d_cls));
        opt.step(params, lr_at(step, total, warmup, base_lr));
        ++step;
      }
      spdlog::debug("finetune seed {} epoch {}: loss {:.6f}", seed, e + 1, epoch_loss / double(spe));
    }

    const Tensor feats = extract_features(enc, test, mcfg.patch_size, cfg.pooling);
    Tensor probs = head.forward(head_norm.forward(feats));
    kernels::softmax_rows(probs.span(), probs.rows(), classes, 1.0);
    SeedResult r = score(test.labels, probs, classes, seed);
    spdlog::info("finetune seed {}: accuracy {:.4f} macro-F1 {:.4f}", seed, r.accuracy, r.macro_f1);
    report.runs.push_back(std::move(r));
  }
  report.summarize();
  return report;
}

// ------------------------------------------------------------ attention

std::vector<fs::path> export_attention(Encoder& encoder, const ModelConfig& model_cfg, const ImageBatch& images,
                                       const fs::path& out_dir) {
  validate(images);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const Tensor maps = attention_maps(encoder, images, model_cfg.patch_size);
  const std::size_t b = maps.dim(0), h = maps.dim(1), g = maps.dim(2), s = images.height();
  std::vector<fs::path> written;
  auto emit = [&](const std::vector<double>& grid, const fs::path& path) {
    const std::vector<double> up = resize_bilinear(grid, g, g, 1, s, s);
    const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
    const double range = *hi - *lo;
    Image8 img{s, s, 1, std::vector<std::uint8_t>(s * s)};
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double v = range > 1e-12 ? (up[i] - *lo) / range : 0.0;
      img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    write_png(path, img);
    written.push_back(path);
  };
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::vector<double> mean(g * g, 0.0);
    char name[64];
    for (std::size_t hd = 0; hd < h; ++hd) {
      const double* m = maps.data() + (bi * h + hd) * g * g;
      std::vector<double> grid(m, m + g * g);
      for (std::size_t i = 0; i < g * g; ++i) mean[i] += grid[i] / double(h);
      std::snprintf(name, sizeof(name), "img%04zu_head%02zu.png", bi, hd);
      emit(grid, out_dir / name);
    }
    std::snprintf(name, sizeof(name), "img%04zu_mean.png", bi);
    emit(mean, out_dir / name);
  }
  return written;
}

}  // namespace sdmae
