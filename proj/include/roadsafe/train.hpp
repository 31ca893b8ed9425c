#pragma once

// Supervised DAM training: seeded shuffling, step-decay SGD, per-epoch
// train/val metrics, prediction and checkpoint helpers.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "roadsafe/checkpoint.hpp"
#include "roadsafe/dam.hpp"
#include "roadsafe/image.hpp"
#include "roadsafe/manifest.hpp"

namespace roadsafe {

/// Images with class labels, held in memory.
struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
  void push_back(Image img, int label) {
    images.push_back(std::move(img));
    labels.push_back(label);
  }
};

/// Loads the entries of `m` matching `split` (all entries if nullopt); image
/// paths are resolved against `root`.
inline LabeledImages load_images(const DatasetManifest& m, const std::string& root,
                                 std::optional<Split> split = std::nullopt) {
  LabeledImages out;
  for (const auto& e : m.entries) {
    if (split && e.split != *split) continue;
    out.push_back(load_pnm((std::filesystem::path(root) / e.image).string()), e.label);
  }
  return out;
}

inline Tensor batch_tensor(const LabeledImages& data, const std::vector<std::size_t>& idx) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(idx.size());
  for (auto i : idx) ptrs.push_back(&data.images.at(i));
  return images_to_tensor(ptrs);
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double accuracy = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& rows) {
  os << "epoch,split,loss,accuracy\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.split << ',' << format_double(r.loss) << ','
       << format_double(r.accuracy) << '\n';
  }
}

inline void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write metrics: " + path);
  write_metrics_csv(os, rows);
}

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double lr0 = 1e-4;
  std::size_t decay_every = 10;
  double decay_factor = 0.5;
  std::uint64_t seed = 0;
  std::size_t eval_batch_size = 32;
  // Stop after the first epoch whose val accuracy reaches this value.
  std::optional<double> stop_at_val_accuracy;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochMetrics> metrics;
  std::vector<std::string> warnings;
  std::size_t epochs_run = 0;
};

struct Prediction {
  std::vector<int> labels;
  std::vector<std::array<double, 2>> probabilities;  // (safe, dangerous)
  double loss = 0.0;  // mean classification loss when labels were supplied
};

/// Batched inference, no gradient recording.
inline Prediction predict(const std::vector<const Image*>& images, const ParamStore& params,
                          const DamConfig& config, std::size_t batch_size = 32,
                          const std::vector<int>* truth = nullptr) {
  if (images.empty()) throw DataError("predict: no images");
  NoGradGuard no_grad;
  Prediction out;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<const Image*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                    images.begin() + static_cast<std::ptrdiff_t>(end));
    auto tr = dam_forward(images_to_tensor(chunk), params, config);
    const auto probs = softmax(tr.logits);
    const auto p = probs.data();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      out.probabilities.push_back({p[2 * b], p[2 * b + 1]});
      out.labels.push_back(p[2 * b + 1] > p[2 * b] ? 1 : 0);
    }
    if (truth) {
      std::vector<int> lab(truth->begin() + static_cast<std::ptrdiff_t>(start),
                           truth->begin() + static_cast<std::ptrdiff_t>(end));
      loss_sum += classification_loss(tr, lab, config).item() * static_cast<double>(chunk.size());
    }
  }
  out.loss = loss_sum / static_cast<double>(images.size());
  return out;
}

inline Prediction predict(const LabeledImages& data, const ParamStore& params,
                          const DamConfig& config, std::size_t batch_size = 32) {
  std::vector<const Image*> ptrs;
  for (const auto& img : data.images) ptrs.push_back(&img);
  return predict(ptrs, params, config, batch_size, &data.labels);
}

inline double accuracy_of(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.empty() || predicted.size() != truth.size()) throw DataError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Gives parameters that took no part in the loss a zero gradient, so a
/// disabled auxiliary head stays fixed instead of failing the update.
inline void fill_missing_grads(ParamStore& params) {
  for (auto& [_, p] : params)
    if (!p.has_grad()) p.mutable_grad();
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Appends val metrics for `params` and returns the val accuracy.
inline double record_val(const LabeledImages& val, const ParamStore& params,
                         const DamConfig& config, std::size_t epoch, std::size_t eval_batch,
                         std::vector<EpochMetrics>& metrics) {
  auto pred = predict(val, params, config, eval_batch);
  const double acc = accuracy_of(pred.labels, val.labels);
  metrics.push_back({epoch, "val", pred.loss, acc});
  return acc;
}

/// Minimizes the classification loss by SGD over seeded-shuffled batches,
/// starting from `init` (seeded initialization when absent).
inline TrainResult train_dam(const LabeledImages& train, const LabeledImages& val,
                             const DamConfig& config, const TrainOptions& opt,
                             std::optional<ParamStore> init = std::nullopt) {
  if (train.empty()) throw DataError("train_dam: empty training set");
  if (opt.epochs < 1) throw ConfigError("train_dam: epochs must be >= 1");
  if (opt.batch_size < 1) throw ConfigError("train_dam: batch size must be >= 1");
  config.validate();
  TrainResult res;
  if (train.count(0) != train.count(1)) {
    res.warnings.push_back("training set is not balanced (" + std::to_string(train.count(0)) +
                           " safe, " + std::to_string(train.count(1)) + " dangerous)");
  }
  res.params = init ? std::move(*init) : init_dam_params(config, opt.seed);
  std::mt19937_64 rng(opt.seed ^ 0x5eedf00dULL);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = step_decay_lr(opt.lr0, epoch, opt.decay_every, opt.decay_factor);
    const auto order = shuffled_indices(train.size(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      auto tr = dam_forward(batch_tensor(train, idx), res.params, config);
      auto loss = classification_loss(tr, labels, config);
      const auto logits = tr.logits.data();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        correct += (logits[2 * b + 1] > logits[2 * b] ? 1 : 0) == labels[b];
      }
      loss_sum += loss.item() * static_cast<double>(idx.size());
      backward(loss);
      fill_missing_grads(res.params);
      sgd_step(res.params, lr);
    }
    res.metrics.push_back({epoch, "train", loss_sum / static_cast<double>(train.size()),
                           static_cast<double>(correct) / static_cast<double>(train.size())});
    res.epochs_run = epoch + 1;
    if (!val.empty()) {
      const double acc = record_val(val, res.params, config, epoch, opt.eval_batch_size, res.metrics);
      if (opt.stop_at_val_accuracy && acc >= *opt.stop_at_val_accuracy) break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints carry the model config so a file is self-describing.

inline void save_model(const std::string& path, const ParamStore& params, const DamConfig& config) {
  save_checkpoint(path, params, to_json(config).dump());
}

struct LoadedModel {
  DamConfig config;
  ParamStore params;
};

inline LoadedModel load_model(const std::string& path) {
  auto ck = load_checkpoint(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  LoadedModel m{dam_config_from_json(j), std::move(ck.params)};
  const auto expected = init_dam_params(m.config, 0);
  if (expected.size() != m.params.size()) throw DataError("checkpoint does not match its config");
  for (const auto& [name, t] : expected) {
    if (!m.params.contains(name) || m.params.at(name).shape() != t.shape()) {
      throw DataError("checkpoint parameter '" + name + "' missing or misshapen");
    }
  }
  return m;
}

}  // namespace roadsafe
