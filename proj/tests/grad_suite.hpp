#pragma once

// Finite-difference checks of the full attention model, shared by the unit
// tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "roadsafe/dam.hpp"

namespace roadsafe::gradsuite {

// Weighted sum with fixed random weights so no coordinate of the gradient is
// trivially tied to another.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, uniform_tensor(t.shape(), 0.5, 1.5, rng)));
}

/// Worst relative error of every primitive op on random shapes, eps 1e-5.
inline std::vector<std::pair<std::string, double>> primitive_errors(std::uint64_t seed) {
  constexpr double kEps = 1e-5;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ext(2, 6);
  const std::size_t n = ext(rng) / 2, c = ext(rng), h = ext(rng) + 2, w = ext(rng) + 2;
  auto rnd = [&](Shape s) { return uniform_tensor(std::move(s), -1.0, 1.0, rng); };
  auto x = rnd({n, c, h, w});
  auto kw = rnd({3, c, 3, 3});
  auto kb = rnd({3});

  std::vector<std::pair<std::string, double>> out;
  auto check = [&](const char* what, auto fn, const Tensor& at) { out.emplace_back(what, grad_check(fn, at, kEps)); };
  check("conv2d/input", [&](const Tensor& t) { return weighted_sum(conv2d(t, kw, kb, 1, 1), seed); }, x);
  check("conv2d/weight", [&](const Tensor& t) { return weighted_sum(conv2d(x, t, kb, 2, 1), seed); }, kw);
  check("conv2d/bias", [&](const Tensor& t) { return weighted_sum(conv2d(x, kw, t, 1, 0), seed); }, kb);
  check("relu", [&](const Tensor& t) { return weighted_sum(relu(t), seed); }, x);
  check("adaptive_avg_pool", [&](const Tensor& t) { return weighted_sum(adaptive_avg_pool(t, 3, 2), seed); }, x);
  check("roi_avg_pool", [&](const Tensor& t) { return weighted_sum(roi_avg_pool(t, {1, 0, h - 1, w - 1}, 7, 7), seed); }, x);
  check("channel_concat", [&](const Tensor& t) { return weighted_sum(channel_concat({t, scale(t, -2.0)}), seed); }, x);
  check("channel_slice", [&](const Tensor& t) { return weighted_sum(channel_slice(t, 0, c - 1), seed); }, x);

  auto m = rnd({n + 2, c});
  auto lw = rnd({4, c});
  auto lb = rnd({4});
  check("linear/input", [&](const Tensor& t) { return weighted_sum(linear(t, lw, lb), seed); }, m);
  check("linear/weight", [&](const Tensor& t) { return weighted_sum(linear(m, t, lb), seed); }, lw);
  check("linear/bias", [&](const Tensor& t) { return weighted_sum(linear(m, lw, t), seed); }, lb);
  check("matmul", [&](const Tensor& t) { return weighted_sum(matmul(transpose(t), t), seed); }, m);
  check("column_sum", [&](const Tensor& t) { return sum_squares(column_sum(t)); }, m);
  check("gather_rows", [&](const Tensor& t) { return weighted_sum(gather_rows(t, {1, 0, 1}), seed); }, m);
  check("l2_normalize_rows", [&](const Tensor& t) { return weighted_sum(l2_normalize_rows(t), seed); }, m);
  check("softmax", [&](const Tensor& t) { return weighted_sum(softmax(t), seed); }, m);
  std::vector<int> labels(n + 2);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % c);
  check("softmax_cross_entropy", [&](const Tensor& t) { return softmax_cross_entropy(t, labels); }, m);
  check("batch_select", [&](const Tensor& t) {
    std::vector<std::size_t> choice(n);
    for (std::size_t b = 0; b < n; ++b) choice[b] = b % 2;
    return weighted_sum(batch_select({t, scale(t, 3.0)}, choice), seed);
  }, x);
  return out;
}

inline DamConfig tiny_config(std::vector<SubregionScheme> schemes) {
  DamConfig c;
  c.input_size = 32;
  c.stem_channels = 2;
  c.stage_channels = {2, 3, 3, 4};
  c.local_channels = {2, 2};
  c.feature_dim = 3;
  c.schemes = std::move(schemes);
  return c;
}

inline std::vector<std::vector<SubregionScheme>> scheme_variants() {
  return {{{SchemeKind::HS, 4}},
          {{SchemeKind::VS, 4}},
          {{SchemeKind::SQ, 4}},
          {{SchemeKind::HS, 4}, {SchemeKind::VS, 4}, {SchemeKind::SQ, 4}}};
}

struct ModelCheck {
  double params_error = 0.0;  // every parameter coordinate, eps 1e-5
  double input_error = 0.0;   // every pixel, eps 1e-5, floor 1e-6
};

/// Checks dam_forward at a generic point: zero-initialized biases are
/// replaced by small random values so no ReLU input sits exactly on its kink.
/// The scalar is the classification loss plus fixed random weightings of the
/// logits and the d-dimensional feature.
inline ModelCheck check_full_model(const DamConfig& c, std::uint64_t seed) {
  auto ps = init_dam_params(c, 100 + seed);
  std::mt19937_64 rng(200 + seed);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (auto& [name, t] : ps)
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0)
      for (auto& v : t.mutable_data()) v = small(rng);
  auto images = uniform_tensor({2, 3, c.input_size, c.input_size}, -0.5, 0.5, rng);
  auto w_logits = uniform_tensor({2, c.num_classes}, 0.5, 1.5, rng);
  auto w_feature = uniform_tensor({2, c.feature_dim}, 0.5, 1.5, rng);
  auto fn = [&] {
    auto tr = dam_forward(images, ps, c);
    return add(add(classification_loss(tr, {0, 1}, c), sum(mul(tr.logits, w_logits))),
               sum(mul(tr.feature, w_feature)));
  };
  std::vector<Tensor> params;
  for (auto& [_, t] : ps) params.push_back(t);
  ModelCheck out;
  out.params_error = grad_check_multi(fn, params, 1e-5);
  // Pixel gradients of the toy net are often 1e-9..1e-7 while central
  // differences at eps 1e-5 carry ~1e-11 of roundoff, so the denominator
  // floor for pixels is 1e-6 rather than 1e-8.
  images.set_requires_grad(true);
  backward(fn());
  const std::vector<double> analytic(images.grad().begin(), images.grad().end());
  images.clear_grad();
  images.set_requires_grad(false);
  NoGradGuard no_grad;
  auto data = images.mutable_data();
  const double eps = 1e-5;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = fn().item();
    data[i] = orig - eps;
    const double down = fn().item();
    data[i] = orig;
    const double n = (up - down) / (2 * eps), a = analytic[i];
    out.input_error =
        std::max(out.input_error, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
  }
  return out;
}

}  // namespace roadsafe::gradsuite
