#pragma once

// Domain adaptation: class-conditional covariance alignment between a
// labeled source domain and a pseudo-labeled target domain, plus the
// class-agnostic CORAL baseline.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "roadsafe/dam.hpp"
#include "roadsafe/manifest.hpp"
#include "roadsafe/train.hpp"

namespace roadsafe {

/// Features of one domain split by class: x = dangerous, y = safe. A class
/// absent from the batch is nullopt.
struct FeatureBatch {
  std::optional<Tensor> x;
  std::optional<Tensor> y;
  std::size_t d = 0;
};

namespace detail {

inline std::size_t rows_of(const std::optional<Tensor>& a) { return a ? a->dim(0) : 0; }

inline void check_features(const std::optional<Tensor>& a, std::size_t d, const char* op) {
  if (!a) return;
  if (a->rank() != 2 || a->dim(1) != d) {
    throw ShapeError(std::string(op) + ": features " + shape_str(a->shape()) +
                     " do not have width " + std::to_string(d));
  }
}

/// 0.5 (M + M^T): exactly symmetric in floating point.
inline Tensor symmetrize(const Tensor& m) { return scale(add(m, transpose(m)), 0.5); }

/// sum_{i,j} (a_i - a_j)(a_i - a_j)^T = 2n A^T A - 2 s s^T, s = 1^T A.
inline Tensor pair_scatter(const Tensor& a) {
  const double n = static_cast<double>(a.dim(0));
  auto s = column_sum(a);
  return sub(scale(matmul(transpose(a), a), 2.0 * n), scale(matmul(transpose(s), s), 2.0));
}

}  // namespace detail

/// Within-class scatter: pairwise outer products inside x plus inside y.
/// A class with fewer than 2 rows contributes zero.
inline Tensor cov_within(const std::optional<Tensor>& x, const std::optional<Tensor>& y, std::size_t d) {
  detail::check_features(x, d, "cov_within");
  detail::check_features(y, d, "cov_within");
  Tensor out = Tensor::zeros({d, d});
  if (detail::rows_of(x) >= 2) out = add(out, detail::pair_scatter(*x));
  if (detail::rows_of(y) >= 2) out = add(out, detail::pair_scatter(*y));
  return detail::symmetrize(out);
}

/// Between-class scatter sum_{i,j} (x_i - y_j)(x_i - y_j)^T; zero if either
/// class is empty.
inline Tensor cov_between(const std::optional<Tensor>& x, const std::optional<Tensor>& y, std::size_t d) {
  detail::check_features(x, d, "cov_between");
  detail::check_features(y, d, "cov_between");
  if (detail::rows_of(x) == 0 || detail::rows_of(y) == 0) return Tensor::zeros({d, d});
  const double nx = static_cast<double>(x->dim(0)), ny = static_cast<double>(y->dim(0));
  auto sx = column_sum(*x), sy = column_sum(*y);
  auto m = add(scale(matmul(transpose(*x), *x), ny), scale(matmul(transpose(*y), *y), nx));
  m = sub(m, matmul(transpose(sx), sy));
  m = sub(m, matmul(transpose(sy), sx));
  return detail::symmetrize(m);
}

inline Tensor cov_within(const FeatureBatch& b) { return cov_within(b.x, b.y, b.d); }
inline Tensor cov_between(const FeatureBatch& b) { return cov_between(b.x, b.y, b.d); }

/// ||S_W - T_W||_F^2 + ||S_B - T_B||_F^2.
inline Tensor loss_da(const FeatureBatch& source, const FeatureBatch& target) {
  if (source.d != target.d) throw ShapeError("loss_da: source and target widths differ");
  return add(sum_squares(sub(cov_within(source), cov_within(target))),
             sum_squares(sub(cov_between(source), cov_between(target))));
}

/// Unbiased feature covariance (A^T A - s^T s / n) / (n - 1).
inline Tensor feature_covariance(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("feature_covariance: expected [n,d], got " + shape_str(a.shape()));
  const std::size_t n = a.dim(0);
  if (n < 2) throw ShapeError("feature_covariance: needs at least 2 samples, got " + std::to_string(n));
  auto s = column_sum(a);
  auto c = sub(matmul(transpose(a), a), scale(matmul(transpose(s), s), 1.0 / static_cast<double>(n)));
  return detail::symmetrize(scale(c, 1.0 / static_cast<double>(n - 1)));
}

/// (1/d) ||C_S - C_T||_F^2.
inline Tensor loss_coral(const Tensor& source, const Tensor& target) {
  if (source.rank() != 2 || target.rank() != 2 || source.dim(1) != target.dim(1)) {
    throw ShapeError("loss_coral: features " + shape_str(source.shape()) + " vs " + shape_str(target.shape()));
  }
  const double d = static_cast<double>(source.dim(1));
  return scale(sum_squares(sub(feature_covariance(source), feature_covariance(target))), 1.0 / d);
}

/// Splits rows of `features` by label (1 = dangerous -> x, 0 = safe -> y).
inline FeatureBatch split_by_class(const Tensor& features, const std::vector<std::size_t>& rows,
                                   const std::vector<int>& labels) {
  FeatureBatch fb;
  fb.d = features.dim(1);
  std::vector<std::size_t> xs, ys;
  for (std::size_t k = 0; k < rows.size(); ++k) (labels[k] == 1 ? xs : ys).push_back(rows[k]);
  if (!xs.empty()) fb.x = gather_rows(features, xs);
  if (!ys.empty()) fb.y = gather_rows(features, ys);
  return fb;
}

// ---------------------------------------------------------------------------
// Pseudo-labels.

inline std::vector<int> pseudo_label(const LabeledImages& target, const ParamStore& params,
                                     const DamConfig& config) {
  if (target.empty()) throw DataError("pseudo_label: empty target set");
  std::vector<const Image*> ptrs;
  for (const auto& img : target.images) ptrs.push_back(&img);
  return predict(ptrs, params, config).labels;
}

/// Copy of `target` whose labels are the model's predictions, flagged pseudo.
inline DatasetManifest pseudo_label(const DatasetManifest& target, const LabeledImages& images,
                                    const ParamStore& params, const DamConfig& config) {
  if (target.entries.size() != images.size()) throw DataError("pseudo_label: manifest/image count mismatch");
  const auto labels = pseudo_label(images, params, config);
  DatasetManifest out = target;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    out.entries[i].label = labels[i];
    out.entries[i].pseudo = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint training.

namespace detail {
// Same schedule as single-domain training, larger mixed batches.
inline TrainOptions da_base_options() {
  TrainOptions t;
  t.batch_size = 16;
  return t;
}
}  // namespace detail

struct DaTrainOptions {
  TrainOptions base = detail::da_base_options();
  double lambda = 1.0;
  bool baseline_loss = false;       // CORAL instead of the class-conditional loss
  bool normalize_features = true;   // L2-normalize fc features before alignment
  double feature_scale = 1.0;       // row norm after normalization
  bool target_in_classification = true;  // pseudo-labeled rows count toward L_C
};

struct DaBatchLoss {
  Tensor total;
  Tensor classification;
  Tensor alignment;
  bool degenerate = false;  // some domain lacked a class
};

/// Loss for one mixed batch whose first `n_source` rows are source samples.
inline DaBatchLoss da_batch_loss(const ForwardTrace& tr, const std::vector<int>& labels,
                                 std::size_t n_source, const DamConfig& config,
                                 const DaTrainOptions& opt) {
  const std::size_t n = labels.size();
  DaBatchLoss out;
  if (opt.target_in_classification) {
    out.classification = classification_loss(tr, labels, config);
  } else {
    std::vector<std::size_t> rows(n_source);
    for (std::size_t i = 0; i < n_source; ++i) rows[i] = i;
    ForwardTrace src = tr;
    src.logits = gather_rows(tr.logits, rows);
    if (config.use_local) src.selected_local_logits = gather_rows(tr.selected_local_logits, rows);
    out.classification = classification_loss(
        src, std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_source)), config);
  }
  const Tensor feats = opt.normalize_features
                           ? scale(l2_normalize_rows(tr.feature), opt.feature_scale)
                           : tr.feature;
  std::vector<std::size_t> s_rows, t_rows;
  for (std::size_t i = 0; i < n; ++i) (i < n_source ? s_rows : t_rows).push_back(i);
  if (opt.baseline_loss) {
    if (s_rows.size() < 2 || t_rows.size() < 2) throw DataError("CORAL loss needs >= 2 samples per domain");
    out.alignment = loss_coral(gather_rows(feats, s_rows), gather_rows(feats, t_rows));
  } else {
    const std::vector<int> s_lab(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_source));
    const std::vector<int> t_lab(labels.begin() + static_cast<std::ptrdiff_t>(n_source), labels.end());
    auto s = split_by_class(feats, s_rows, s_lab);
    auto t = split_by_class(feats, t_rows, t_lab);
    out.degenerate = !s.x || !s.y || !t.x || !t.y;
    out.alignment = loss_da(s, t);
  }
  out.total = opt.lambda == 0.0 ? out.classification
                                : add(out.classification, scale(out.alignment, opt.lambda));
  return out;
}

struct DaStepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  const Tensor* images = nullptr;
  const std::vector<int>* labels = nullptr;
  std::size_t n_source = 0;
  const DaBatchLoss* loss = nullptr;
};

struct DaTrainResult : TrainResult {
  std::size_t degenerate_batches = 0;
  std::size_t steps = 0;
};

/// Half-source / half-target batches; the target labels are pseudo-labels.
/// An epoch runs ceil(max(|S|, |T|) / half) steps, each domain cycling
/// through its own seeded permutation. `on_step` sees every batch before the
/// update. `val` (target images with true labels) is scored each epoch.
inline DaTrainResult train_dam_da(const LabeledImages& source, const LabeledImages& target,
                                  const LabeledImages& val, const DamConfig& config,
                                  const DaTrainOptions& opt, std::optional<ParamStore> init = std::nullopt,
                                  const std::function<void(const DaStepLog&)>& on_step = {}) {
  if (source.empty() || target.empty()) throw DataError("train_dam_da: source and target must be non-empty");
  if (opt.lambda < 0) throw ConfigError("train_dam_da: lambda must be >= 0");
  if (opt.base.batch_size < 2 || opt.base.batch_size % 2 != 0) throw ConfigError("train_dam_da: batch size must be even");
  if (opt.base.epochs < 1) throw ConfigError("train_dam_da: epochs must be >= 1");
  if (!config.da_mode) throw ConfigError("train_dam_da: model config must have da_mode set");
  config.validate();

  DaTrainResult res;
  res.params = init ? std::move(*init) : init_dam_params(config, opt.base.seed);
  std::mt19937_64 rng(opt.base.seed ^ 0xda7a5eedULL);
  const std::size_t half = opt.base.batch_size / 2;
  const std::size_t steps = (std::max(source.size(), target.size()) + half - 1) / half;

  struct Cycler {
    const LabeledImages* data;
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::size_t next(std::mt19937_64& rng) {
      if (pos == order.size()) {
        order = shuffled_indices(data->size(), rng);
        pos = 0;
      }
      return order[pos++];
    }
  };
  Cycler cs{&source, {}, 0}, ct{&target, {}, 0};

  for (std::size_t epoch = 0; epoch < opt.base.epochs; ++epoch) {
    const double lr = step_decay_lr(opt.base.lr0, epoch, opt.base.decay_every, opt.base.decay_factor);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<const Image*> ptrs;
      std::vector<int> labels;
      for (std::size_t k = 0; k < half; ++k) {
        const auto i = cs.next(rng);
        ptrs.push_back(&source.images[i]);
        labels.push_back(source.labels[i]);
      }
      for (std::size_t k = 0; k < half; ++k) {
        const auto i = ct.next(rng);
        ptrs.push_back(&target.images[i]);
        labels.push_back(target.labels[i]);
      }
      const Tensor images = images_to_tensor(ptrs);
      auto tr = dam_forward(images, res.params, config);
      auto loss = da_batch_loss(tr, labels, half, config, opt);
      if (loss.degenerate) ++res.degenerate_batches;
      if (on_step) on_step({epoch, res.steps, &images, &labels, half, &loss});
      const auto logits = tr.logits.data();
      for (std::size_t b = 0; b < labels.size(); ++b) {
        correct += (logits[2 * b + 1] > logits[2 * b] ? 1 : 0) == labels[b];
      }
      seen += labels.size();
      loss_sum += loss.total.item();
      backward(loss.total);
      fill_missing_grads(res.params);
      sgd_step(res.params, lr);
      ++res.steps;
    }
    res.metrics.push_back({epoch, "train", loss_sum / static_cast<double>(steps),
                           static_cast<double>(correct) / static_cast<double>(seen)});
    res.epochs_run = epoch + 1;
    if (!val.empty()) {
      const double acc = record_val(val, res.params, config, epoch, opt.base.eval_batch_size, res.metrics);
      if (opt.base.stop_at_val_accuracy && acc >= *opt.base.stop_at_val_accuracy) break;
    }
  }
  if (res.degenerate_batches > 0) {
    res.warnings.push_back(std::to_string(res.degenerate_batches) +
                           " batches lacked a class in some domain; their covariance terms were zero");
  }
  return res;
}

}  // namespace roadsafe
