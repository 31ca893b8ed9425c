#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "roadsafe/tensor.hpp"

namespace roadsafe {

/// Ordered, named collection of trainable tensors. Order is insertion order
/// and fixes the update order and the checkpoint layout.
class ParamStore {
 public:
  /// Registers a parameter; the returned handle shares its storage.
  Tensor add(std::string name, Tensor value) {
    for (const auto& [n, _] : entries_) {
      if (n == name) throw ConfigError("duplicate parameter name: " + name);
    }
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), value);
    return value;
  }

  const Tensor& at(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw ConfigError("unknown parameter: " + name);
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }
  bool contains(const std::string& name) const {
    for (const auto& [n, _] : entries_)
      if (n == name) return true;
    return false;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.clear_grad();
  }

  /// Independent copy of every tensor (no shared storage).
  ParamStore deep_copy() const {
    ParamStore out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone(true));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// lr0 * 0.5^floor(epoch / 10).
inline double step_decay_lr(double lr0, std::size_t epoch,
                            std::size_t decay_every = 10, double factor = 0.5) {
  return lr0 * std::pow(factor, static_cast<double>(epoch / decay_every));
}

/// p <- p - lr * grad(p) for every parameter, then clears gradients.
/// Every parameter in the set must have received a gradient.
inline void sgd_step(ParamStore& params, double lr) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) {
      throw Error("sgd_step: parameter '" + name + "' has no gradient");
    }
  }
  for (auto& [name, p] : params) {
    auto data = p.mutable_data();
    auto grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
    p.clear_grad();
  }
}

/// Largest relative disagreement between the tape gradient of `fn` at
/// `input` and central finite differences, |a-n| / max(|a|,|n|,1e-8).
/// `input` values are restored before returning.
inline double grad_check(const std::function<Tensor(const Tensor&)>& fn,
                         Tensor input, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  const bool saved_flag = input.requires_grad();
  input.clear_grad();
  input.set_requires_grad(true);

  std::vector<double> analytic(input.numel(), 0.0);
  {
    Tensor out = fn(input);
    if (out.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
    if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite fn output");
    if (out.requires_grad()) {
      backward(out);
      if (input.has_grad()) {
        auto g = input.grad();
        analytic.assign(g.begin(), g.end());
      }
    }
  }
  input.clear_grad();
  input.set_requires_grad(saved_flag);

  NoGradGuard no_grad;
  auto data = input.mutable_data();
  auto eval = [&] {
    const double v = fn(input).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite fn output");
    return v;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = eval();
    data[i] = orig - eps;
    const double down = eval();
    data[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

/// grad_check over several tensors at once. `fn` closes over the tensors.
/// With max_coords > 0, each tensor is probed at that many coordinates drawn
/// with `seed`; otherwise at every coordinate.
inline double grad_check_multi(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                               double eps, std::size_t max_coords = 0, std::uint64_t seed = 0) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  std::vector<bool> saved;
  for (auto& t : inputs) {
    saved.push_back(t.requires_grad());
    t.clear_grad();
    t.set_requires_grad(true);
  }
  std::vector<std::vector<double>> analytic;
  {
    Tensor out = fn();
    if (out.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
    if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite fn output");
    if (out.requires_grad()) backward(out);
    for (auto& t : inputs) {
      if (t.has_grad()) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
      } else {
        analytic.emplace_back(t.numel(), 0.0);
      }
      t.clear_grad();
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(saved[k]);

  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords;
    if (max_coords == 0 || max_coords >= data.size()) {
      for (std::size_t i = 0; i < data.size(); ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    }
    for (auto i : coords) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = fn().item();
      data[i] = orig - eps;
      const double down = fn().item();
      data[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite fn output");
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Gaussian fill with standard deviation sqrt(gain / fan_in).
inline Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng,
                        double gain = 2.0) {
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi,
                             std::mt19937_64& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace roadsafe
