#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <sstream>

#include "roadsafe/domain_adapt.hpp"
#include "roadsafe/synth.hpp"

using namespace roadsafe;

namespace {

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

FeatureBatch batch(std::optional<Tensor> x, std::optional<Tensor> y, std::size_t d) {
  return {std::move(x), std::move(y), d};
}

using Rows = std::vector<std::vector<double>>;

Rows rows_of(const Tensor& t) {
  Rows out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t.values()[i * t.dim(1) + j];
  return out;
}

// Plain double-loop sums over ordered pairs.
std::vector<double> pairwise_within(const Rows& a, std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (i == j) continue;
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q) m[p * d + q] += (a[i][p] - a[j][p]) * (a[i][q] - a[j][q]);
    }
  return m;
}

std::vector<double> pairwise_between(const Rows& x, const Rows& y, std::size_t d) {
  std::vector<double> m(d * d, 0.0);
  for (const auto& xi : x)
    for (const auto& yj : y)
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q) m[p * d + q] += (xi[p] - yj[p]) * (xi[q] - yj[q]);
  return m;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

void expect_exactly_symmetric(const Tensor& m) {
  const std::size_t d = m.dim(0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) ASSERT_EQ(m.values()[i * d + j], m.values()[j * d + i]);
}

double min_eigenvalue(const Tensor& m) {
  const auto d = static_cast<Eigen::Index>(m.dim(0));
  Eigen::MatrixXd e(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) e(i, j) = m.values()[static_cast<std::size_t>(i * d + j)];
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().minCoeff();
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == 0.0; });
}

}  // namespace

TEST(Covariance, HandCases) {
  const auto x = column({0, 2}), y = column({1, 3});
  EXPECT_EQ(cov_within(x, y, 1).values(), std::vector<double>{16});
  EXPECT_EQ(cov_between(x, y, 1).values(), std::vector<double>{12});
  // every sample identical
  const auto same = Tensor({3, 2}, {1, 2, 1, 2, 1, 2});
  EXPECT_TRUE(all_zero(cov_within(same, same, 2)));
  EXPECT_TRUE(all_zero(cov_between(column({5}), column({5}), 1)));
}

TEST(Covariance, MomentIdentitiesMatchPairwiseSums) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> nd(0, 32), dd(1, 16);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = dd(rng), nx = nd(rng), ny = nd(rng);
    std::optional<Tensor> x, y;
    if (nx) x = uniform_tensor({nx, d}, -3.0, 3.0, rng);
    if (ny) y = uniform_tensor({ny, d}, -3.0, 3.0, rng);
    const Rows rx = x ? rows_of(*x) : Rows{}, ry = y ? rows_of(*y) : Rows{};
    auto within = pairwise_within(rx, d);
    const auto wy = pairwise_within(ry, d);
    for (std::size_t i = 0; i < within.size(); ++i) within[i] += wy[i];
    const auto between = pairwise_between(rx, ry, d);

    const auto w = cov_within(x, y, d), b = cov_between(x, y, d);
    ASSERT_EQ(w.shape(), (Shape{d, d}));
    ASSERT_EQ(b.shape(), (Shape{d, d}));
    if (nx < 2 && ny < 2) {
      EXPECT_TRUE(all_zero(w));
    } else {
      EXPECT_LT(rel_diff(w.values(), within), 1e-8) << "trial " << trial;
    }
    if (nx == 0 || ny == 0) {
      EXPECT_TRUE(all_zero(b));
    } else {
      EXPECT_LT(rel_diff(b.values(), between), 1e-8) << "trial " << trial;
    }
    expect_exactly_symmetric(w);
    expect_exactly_symmetric(b);
    // positive semidefinite up to roundoff
    const double tol = 1e-9 * (1.0 + *std::max_element(within.begin(), within.end()) +
                               *std::max_element(between.begin(), between.end()));
    EXPECT_GE(min_eigenvalue(w), -tol);
    EXPECT_GE(min_eigenvalue(b), -tol);
  }
}

TEST(Covariance, DegenerateClasses) {
  const auto one = Tensor({1, 3}, {1, 2, 3});
  EXPECT_TRUE(all_zero(cov_within(one, one, 3)));
  EXPECT_TRUE(all_zero(cov_within(std::nullopt, std::nullopt, 3)));
  EXPECT_TRUE(all_zero(cov_between(one, std::nullopt, 3)));
  EXPECT_TRUE(all_zero(cov_between(std::nullopt, one, 3)));
  EXPECT_EQ(cov_between(std::nullopt, std::nullopt, 3).shape(), (Shape{3, 3}));
  // a lone sample still contributes to the between term
  EXPECT_EQ(cov_between(column({0}), column({2, 4}), 1).values(), std::vector<double>{20});
  EXPECT_THROW(cov_within(one, std::nullopt, 2), ShapeError);
}

TEST(LossDa, HandCasesAndIdentity) {
  const auto src = batch(column({0, 2}), column({1, 3}), 1);  // within 16, between 12
  const auto tgt = batch(column({0, 3}), column({1, 1}), 1);  // within 18, between 10
  EXPECT_EQ(cov_within(tgt).values(), std::vector<double>{18});
  EXPECT_EQ(cov_between(tgt).values(), std::vector<double>{10});
  EXPECT_EQ(loss_da(src, tgt).item(), 8.0);
  EXPECT_EQ(loss_da(src, src).item(), 0.0);
  std::mt19937_64 rng(3);
  auto x = uniform_tensor({5, 4}, -1.0, 1.0, rng), y = uniform_tensor({6, 4}, -1.0, 1.0, rng);
  EXPECT_EQ(loss_da(batch(x, y, 4), batch(x.clone(), y.clone(), 4)).item(), 0.0);
  EXPECT_THROW(loss_da(batch(x, y, 4), batch(column({1, 2}), column({1, 2}), 1)), ShapeError);
}

TEST(LossDa, NonNegativeAndInvariant) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> nd(0, 10), dd(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = dd(rng);
    auto make = [&] {
      FeatureBatch b;
      b.d = d;
      if (auto n = nd(rng)) b.x = uniform_tensor({n, d}, -1.0, 1.0, rng);
      if (auto n = nd(rng)) b.y = uniform_tensor({n, d}, -1.0, 1.0, rng);
      return b;
    };
    const auto s = make(), t = make();
    const double base = loss_da(s, t).item();
    EXPECT_GE(base, 0.0);

    // reversed sample order inside every class list
    auto reversed = [&](const std::optional<Tensor>& a) -> std::optional<Tensor> {
      if (!a) return a;
      std::vector<std::size_t> idx(a->dim(0));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = idx.size() - 1 - i;
      return gather_rows(*a, idx);
    };
    const double permuted = loss_da(batch(reversed(s.x), reversed(s.y), d), batch(reversed(t.x), reversed(t.y), d)).item();
    EXPECT_NEAR(permuted, base, 1e-10 * (1.0 + base));

    // shifting a whole domain by one vector leaves its covariances unchanged
    auto shift = uniform_tensor({1, d}, -2.0, 2.0, rng);
    auto shifted = [&](const std::optional<Tensor>& a) -> std::optional<Tensor> {
      if (!a) return a;
      std::vector<std::size_t> zeros(a->dim(0), 0);
      return add(*a, gather_rows(shift, zeros));
    };
    const double moved = loss_da(batch(shifted(s.x), shifted(s.y), d), t).item();
    EXPECT_NEAR(moved, base, 1e-9 * (1.0 + base));
  }
}

TEST(LossDa, GradientCheck) {
  std::mt19937_64 rng(31);
  for (std::size_t d = 1; d <= 8; ++d) {
    auto sx = uniform_tensor({4, d}, -1.0, 1.0, rng), sy = uniform_tensor({3, d}, -1.0, 1.0, rng);
    auto tx = uniform_tensor({2, d}, -1.0, 1.0, rng), ty = uniform_tensor({5, d}, -1.0, 1.0, rng);
    auto fn = [&] { return loss_da(batch(sx, sy, d), batch(tx, ty, d)); };
    EXPECT_LT(grad_check_multi(fn, {sx, sy, tx, ty}, 1e-5), 1e-4) << "d " << d;
    auto coral = [&] { return loss_coral(sx, ty); };
    EXPECT_LT(grad_check_multi(coral, {sx, ty}, 1e-5), 1e-4) << "d " << d;
  }
}

TEST(LossCoral, HandCasesAndErrors) {
  EXPECT_EQ(feature_covariance(column({1, 3, 5})).values(), std::vector<double>{4});
  EXPECT_EQ(loss_coral(column({1, 3, 5}), column({0, 1, 2})).item(), 9.0);
  std::mt19937_64 rng(8);
  auto a = uniform_tensor({6, 3}, -1.0, 1.0, rng), b = uniform_tensor({4, 3}, -1.0, 1.0, rng);
  EXPECT_EQ(loss_coral(a, a.clone()).item(), 0.0);
  // each domain may be shifted on its own
  std::vector<std::size_t> zeros(6, 0);
  auto moved = add(a, gather_rows(Tensor({1, 3}, {5, -2, 1}), zeros));
  EXPECT_NEAR(loss_coral(moved, b).item(), loss_coral(a, b).item(), 1e-12);
  expect_exactly_symmetric(feature_covariance(a));
  EXPECT_THROW(loss_coral(column({1}), column({1, 2})), ShapeError);
  EXPECT_THROW(loss_coral(a, Tensor({2, 2}, {1, 2, 3, 4})), ShapeError);
}

namespace {

LabeledImages to_labeled(const SynthSet& set) {
  LabeledImages out;
  for (const auto& s : set.samples) out.push_back(s.image, s.label);
  return out;
}

LabeledImages styled(std::size_t per_class, std::uint64_t seed, Domain style, std::size_t size = 32,
                     std::size_t jitter = 0) {
  SynthOptions o;
  o.jitter_px = jitter;
  o.n_per_class = per_class;
  o.seed = seed;
  o.style = style;
  o.height = o.width = size;
  return to_labeled(synth_generate(o));
}

DamConfig da_config(std::size_t size = 32) {
  DamConfig c;
  c.input_size = size;
  c.da_mode = true;
  return c;
}

}  // namespace

TEST(TrainDa, DefaultsMatchFullScaleSchedule) {
  DaTrainOptions o;
  EXPECT_EQ(o.base.batch_size, 16u);
  EXPECT_DOUBLE_EQ(o.base.lr0, 1e-4);
  EXPECT_EQ(o.base.epochs, 50u);
  EXPECT_EQ(o.base.decay_every, 10u);
  EXPECT_DOUBLE_EQ(o.base.decay_factor, 0.5);
  EXPECT_DOUBLE_EQ(o.lambda, 1.0);
  EXPECT_FALSE(o.baseline_loss);
}

TEST(TrainDa, ZeroLambdaIsPlainClassificationLoss) {
  const auto src = styled(6, 1, Domain::source), tgt = styled(6, 2, Domain::target);
  const auto c = da_config();
  DaTrainOptions o;
  o.base.epochs = 2;
  o.base.batch_size = 8;
  o.base.lr0 = 0.01;
  o.lambda = 0.0;
  // copies of a ParamStore share tensor storage, so `init` follows the updates
  auto init = init_dam_params(c, 5);
  std::size_t checked = 0;
  auto res = train_dam_da(src, tgt, {}, c, o, init, [&](const DaStepLog& log) {
    NoGradGuard no_grad;
    const auto tr = dam_forward(*log.images, init, c);
    const double plain = classification_loss(tr, *log.labels, c).item();
    EXPECT_NEAR(log.loss->total.item(), plain, 1e-12);
    EXPECT_EQ(log.loss->total.item(), log.loss->classification.item());
    ++checked;
  });
  EXPECT_EQ(checked, res.steps);
  EXPECT_EQ(res.steps, 2u * 3u);
}

TEST(TrainDa, DeterministicAndLogsDegenerateBatches) {
  const auto src = styled(5, 3, Domain::source), tgt = styled(5, 4, Domain::target);
  const auto c = da_config();
  DaTrainOptions o;
  o.base.epochs = 2;
  o.base.batch_size = 4;
  o.base.lr0 = 0.01;
  o.base.seed = 9;
  o.feature_scale = 0.3;
  const auto a = train_dam_da(src, tgt, tgt, c, o);
  const auto b = train_dam_da(src, tgt, tgt, c, o);
  for (const auto& [name, p] : a.params) EXPECT_EQ(p.values(), b.params.at(name).values()) << name;
  std::ostringstream ma, mb;
  write_metrics_csv(ma, a.metrics);
  write_metrics_csv(mb, b.metrics);
  EXPECT_EQ(ma.str(), mb.str());
  // 2 samples per domain per batch: single-class batches are certain to occur
  EXPECT_GT(a.degenerate_batches, 0u);
  EXPECT_FALSE(a.warnings.empty());
  o.baseline_loss = true;
  EXPECT_NO_THROW(train_dam_da(src, tgt, {}, c, o));
}

TEST(TrainDa, Errors) {
  const auto src = styled(2, 1, Domain::source), tgt = styled(2, 2, Domain::target);
  auto c = da_config();
  DaTrainOptions o;
  o.base.epochs = 1;
  o.base.batch_size = 4;
  EXPECT_THROW(train_dam_da({}, tgt, {}, c, o), DataError);
  EXPECT_THROW(train_dam_da(src, {}, {}, c, o), DataError);
  o.base.batch_size = 3;
  EXPECT_THROW(train_dam_da(src, tgt, {}, c, o), ConfigError);
  o.base.batch_size = 4;
  o.lambda = -1;
  EXPECT_THROW(train_dam_da(src, tgt, {}, c, o), ConfigError);
  o.lambda = 1;
  c.da_mode = false;
  EXPECT_THROW(train_dam_da(src, tgt, {}, c, o), ConfigError);
}

TEST(PseudoLabel, MatchesPredictAndFlagsEntries) {
  SynthOptions o;
  o.n_per_class = 6;
  o.seed = 12;
  o.style = Domain::target;
  o.height = o.width = 32;
  const auto set = synth_generate(o);
  const auto images = to_labeled(set);
  const auto c = da_config();
  const auto ps = init_dam_params(c, 3);
  const auto labels = pseudo_label(images, ps, c);
  EXPECT_EQ(labels, predict(images, ps, c).labels);
  EXPECT_EQ(labels, pseudo_label(images, ps, c));
  const auto m = pseudo_label(set.manifest, images, ps, c);
  ASSERT_EQ(m.entries.size(), images.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    EXPECT_EQ(m.entries[i].label, labels[i]);
    EXPECT_TRUE(m.entries[i].pseudo);
    EXPECT_EQ(m.entries[i].image, set.manifest.entries[i].image);
  }
  EXPECT_THROW(pseudo_label(LabeledImages{}, ps, c), DataError);
  auto short_manifest = set.manifest;
  short_manifest.entries.pop_back();
  EXPECT_THROW(pseudo_label(short_manifest, images, ps, c), DataError);
}

TEST(PseudoLabel, BeatsChanceOnShiftedTarget) {
  const auto src = styled(100, 2, Domain::source, 64, 8);
  const auto val = styled(50, 102, Domain::source, 64, 8);
  const auto tgt = styled(100, 202, Domain::target, 64, 8);
  const auto c = da_config(64);
  TrainOptions t;
  t.epochs = 3;
  t.lr0 = 0.01;
  t.seed = 2;
  t.stop_at_val_accuracy = 0.97;
  const auto r = train_dam(src, val, c, t);
  const auto labels = pseudo_label(tgt, r.params, c);
  const double acc = accuracy_of(labels, tgt.labels);
  std::cout << "pseudo-label accuracy on target: " << acc << "\n";
  EXPECT_GT(acc, 0.75);
}
