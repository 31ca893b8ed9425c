#pragma once

// Minimal reverse-mode tensor engine. Every op that sees an input with
// requires_grad records its output as a node holding its parents and a
// backward rule. Node ids are handed out in creation order, so sorting the
// reachable nodes by id yields a topological order without a DFS stack.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "roadsafe/error.hpp"

namespace roadsafe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = next_node_id();
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

/// Disables graph recording for its lifetime (evaluation, inference).
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Shared handle to an n-d array of doubles plus optional gradient.
/// Copies alias the same storage, which is how parameters are shared
/// between a model and its optimizer.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value),
                  requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() {
    impl_->grad_buffer();
    return impl_->grad;
  }
  void clear_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->parents.empty(); }
  std::uint64_t node_id() const { return impl_->id; }

  /// Detached copy with its own storage and no history.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->data, requires_grad);
  }

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

inline void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output " +
                         shape_str(t.shape()));
    }
  }
}

/// Wires `out` into the graph when any input tracks gradients.
inline Tensor record(Tensor out, std::initializer_list<Tensor> inputs,
                     std::function<void(TensorImpl&)> backward_fn,
                     const char* op) {
  require_finite(out, op);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto* impl = out.impl();
  impl->requires_grad = true;
  for (const auto& in : inputs) impl->parents.push_back(in.impl_ptr());
  impl->backward_fn = std::move(backward_fn);
  return out;
}

inline Tensor record(Tensor out, const std::vector<Tensor>& inputs,
                     std::function<void(TensorImpl&)> backward_fn,
                     const char* op) {
  require_finite(out, op);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto* impl = out.impl();
  impl->requires_grad = true;
  for (const auto& in : inputs) impl->parents.push_back(in.impl_ptr());
  impl->backward_fn = std::move(backward_fn);
  return out;
}

/// Gradient sink for a parent; nullptr when the parent does not need one.
inline double* sink(const std::shared_ptr<TensorImpl>& p) {
  return p->requires_grad ? p->grad_buffer() : nullptr;
}

}  // namespace detail

/// Nodes reachable from a root, in creation (= topological) order.
class Tape {
 public:
  static Tape record_from(const Tensor& root) {
    Tape tape;
    std::vector<detail::TensorImpl*> stack{root.impl()};
    std::vector<std::uint64_t> seen;
    while (!stack.empty()) {
      auto* node = stack.back();
      stack.pop_back();
      if (!node->requires_grad) continue;
      auto it = std::lower_bound(seen.begin(), seen.end(), node->id);
      if (it != seen.end() && *it == node->id) continue;
      seen.insert(it, node->id);
      tape.nodes_.push_back(node);
      for (auto& p : node->parents) stack.push_back(p.get());
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](auto* a, auto* b) { return a->id < b->id; });
    return tape;
  }

  std::size_t size() const { return nodes_.size(); }
  std::span<detail::TensorImpl* const> nodes() const { return nodes_; }

  /// Runs every recorded backward rule once, newest node first.
  void replay_backward() const {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  std::vector<detail::TensorImpl*> nodes_;
};

/// Populates gradients of every requires_grad tensor that feeds `loss`.
/// Leaf gradients accumulate across calls; clear them between steps.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw Error("backward: loss is not on the tape (no input requires grad)");
  }
  const Tape tape = Tape::record_from(loss);
  loss.impl()->grad_buffer()[0] += 1.0;
  tape.replay_backward();
  // Interior buffers are no longer needed; leaves keep theirs.
  for (auto* node : tape.nodes()) {
    if (!node->parents.empty()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reshaping ops.

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto pa = a.impl_ptr(), pb = b.impl_ptr();
  return detail::record(
      Tensor(a.shape(), std::move(out)), {a, b},
      [pa, pb](detail::TensorImpl& self) {
        for (auto* g : {detail::sink(pa), detail::sink(pb)}) {
          if (!g) continue;
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto pa = a.impl_ptr(), pb = b.impl_ptr();
  return detail::record(
      Tensor(a.shape(), std::move(out)), {a, b},
      [pa, pb](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (double* g = detail::sink(pb))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
      },
      "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.impl_ptr(), pb = b.impl_ptr();
  return detail::record(
      Tensor(a.shape(), std::move(out)), {a, b},
      [pa, pb](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * pb->data[i];
        if (double* g = detail::sink(pb))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * pa->data[i];
      },
      "mul");
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor(a.shape(), std::move(out)), {a},
      [pa, factor](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] += self.grad[i] * factor;
      },
      "scale");
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.data()[i]);
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor(a.shape(), std::move(out)), {a},
      [pa](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pa->data[i] > 0.0) g[i] += self.grad[i];
      },
      "relu");
}

/// Sum of all entries, as a 1-element tensor.
inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor({1}, {total}), {a},
      [pa](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < pa->data.size(); ++i) g[i] += self.grad[0];
      },
      "sum");
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Sum of squares; the squared Frobenius norm for matrices.
inline Tensor sum_squares(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v * v;
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor({1}, {total}), {a},
      [pa](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < pa->data.size(); ++i)
            g[i] += 2.0 * pa->data[i] * self.grad[0];
      },
      "sum_squares");
}

/// Same data viewed under a new shape with equal element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " +
                     shape_str(shape));
  }
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor(std::move(shape), a.values()), {a},
      [pa](detail::TensorImpl& self) {
        if (double* g = detail::sink(pa))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

/// [N, ...] -> [N, prod(...)].
inline Tensor flatten(const Tensor& a) {
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

}  // namespace roadsafe
