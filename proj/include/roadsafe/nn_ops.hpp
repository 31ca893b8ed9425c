#pragma once

// Differentiable layer primitives on NCHW tensors. Dense products go through
// Eigen's single-threaded GEMM, which has a fixed reduction order.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "roadsafe/tensor.hpp"

namespace roadsafe {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op,
                         const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must be rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

inline void require_dim(std::size_t got, std::size_t want, const char* op,
                        const std::string& what) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": " + what + " is " +
                     std::to_string(got) + ", expected " + std::to_string(want));
  }
}

}  // namespace detail

/// Bin i of `bins` over an axis of `length` covers
/// [floor(i*length/bins), floor((i+1)*length/bins)). When length < bins a
/// bin would be empty, so it is widened to the single cell at its start.
inline std::pair<std::size_t, std::size_t> bin_range(std::size_t i,
                                                     std::size_t length,
                                                     std::size_t bins) {
  const std::size_t start = i * length / bins;
  std::size_t end = (i + 1) * length / bins;
  if (end <= start) end = start + 1;
  return {start, end};
}

/// Axis-aligned rectangle in feature-map coordinates (half-open).
struct Region {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const Region&, const Region&) = default;
};

/// 2-D convolution, NCHW input, [Co,Ci,kh,kw] weight, square stride/padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, std::size_t stride, std::size_t pad) {
  using namespace detail;
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), ci = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require_dim(weight.dim(1), ci, "conv2d", "weight input-channel dimension");
  require_dim(bias.dim(0), co, "conv2d", "bias length");
  if (kh > h + 2 * pad) {
    throw ShapeError("conv2d: kernel height " + std::to_string(kh) +
                     " exceeds padded input height " + std::to_string(h + 2 * pad));
  }
  if (kw > w + 2 * pad) {
    throw ShapeError("conv2d: kernel width " + std::to_string(kw) +
                     " exceeds padded input width " + std::to_string(w + 2 * pad));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  const std::size_t k = ci * kh * kw, p = ho * wo;

  // im2col buffers are kept for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(n * k * p, 0.0);
  const double* x = input.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    double* c = cols->data() + b * k * p;
    for (std::size_t ch = 0; ch < ci; ++ch)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double* row = c + ((ch * kh + ky) * kw + kx) * p;
          const double* plane = x + (b * ci + ch) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              row[oy * wo + ox] = plane[iy * w + ix];
            }
          }
        }
  }

  std::vector<double> out(n * co * p);
  ConstMapMat wm(weight.data().data(), co, k);
  for (std::size_t b = 0; b < n; ++b) {
    MapMat om(out.data() + b * co * p, co, p);
    om.noalias() = wm * ConstMapMat(cols->data() + b * k * p, k, p);
    for (std::size_t o = 0; o < co; ++o) om.row(o).array() += bias.data()[o];
  }

  auto px = input.impl_ptr(), pw = weight.impl_ptr(), pb = bias.impl_ptr();
  return detail::record(
      Tensor({n, co, ho, wo}, std::move(out)), {input, weight, bias},
      [=](TensorImpl& self) {
        double* gx = sink(px);
        double* gw = sink(pw);
        double* gb = sink(pb);
        ConstMapMat wmat(pw->data.data(), co, k);
        std::vector<double> dcols(gx ? k * p : 0);
        for (std::size_t b = 0; b < n; ++b) {
          ConstMapMat g(self.grad.data() + b * co * p, co, p);
          if (gw) {
            MapMat(gw, co, k).noalias() +=
                g * ConstMapMat(cols->data() + b * k * p, k, p).transpose();
          }
          if (gb) {
            for (std::size_t o = 0; o < co; ++o) gb[o] += g.row(o).sum();
          }
          if (gx) {
            MapMat(dcols.data(), k, p).noalias() = wmat.transpose() * g;
            for (std::size_t ch = 0; ch < ci; ++ch)
              for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const double* row = dcols.data() + ((ch * kh + ky) * kw + kx) * p;
                  double* plane = gx + (b * ci + ch) * h * w;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                      if (ix < 0 || ix >= static_cast<long>(w)) continue;
                      plane[iy * w + ix] += row[oy * wo + ox];
                    }
                  }
                }
          }
        }
      },
      "conv2d");
}

/// out[n,o] = sum_f input[n,f] * weight[o,f] + bias[o].
inline Tensor linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  using namespace detail;
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
  require_dim(weight.dim(1), f, "linear", "weight input dimension");
  require_dim(bias.dim(0), o, "linear", "bias length");
  std::vector<double> out(n * o);
  MapMat om(out.data(), n, o);
  om.noalias() = ConstMapMat(input.data().data(), n, f) *
                 ConstMapMat(weight.data().data(), o, f).transpose();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < o; ++c) om(r, c) += bias.data()[c];

  auto px = input.impl_ptr(), pw = weight.impl_ptr(), pb = bias.impl_ptr();
  return detail::record(
      Tensor({n, o}, std::move(out)), {input, weight, bias},
      [=](TensorImpl& self) {
        ConstMapMat g(self.grad.data(), n, o);
        if (double* gx = sink(px))
          MapMat(gx, n, f).noalias() += g * ConstMapMat(pw->data.data(), o, f);
        if (double* gw = sink(pw))
          MapMat(gw, o, f).noalias() +=
              g.transpose() * ConstMapMat(px->data.data(), n, f);
        if (double* gb = sink(pb))
          for (std::size_t c = 0; c < o; ++c) gb[c] += g.col(c).sum();
      },
      "linear");
}

/// [m,k] x [k,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require_dim(b.dim(0), k, "matmul", "rhs row count");
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  auto pa = a.impl_ptr(), pb = b.impl_ptr();
  return detail::record(
      Tensor({m, n}, std::move(out)), {a, b},
      [=](TensorImpl& self) {
        ConstMapMat g(self.grad.data(), m, n);
        if (double* ga = sink(pa))
          MapMat(ga, m, k).noalias() +=
              g * ConstMapMat(pb->data.data(), k, n).transpose();
        if (double* gb = sink(pb))
          MapMat(gb, k, n).noalias() +=
              ConstMapMat(pa->data.data(), m, k).transpose() * g;
      },
      "matmul");
}

inline Tensor transpose(const Tensor& a) {
  using namespace detail;
  require_rank(a, 2, "transpose", "input");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = ConstMapMat(a.data().data(), m, n).transpose();
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor({n, m}, std::move(out)), {a},
      [=](TensorImpl& self) {
        if (double* ga = sink(pa))
          MapMat(ga, m, n) += ConstMapMat(self.grad.data(), n, m).transpose();
      },
      "transpose");
}

/// Column sums of an [n,d] matrix as a [1,d] row.
inline Tensor column_sum(const Tensor& a) {
  using namespace detail;
  require_rank(a, 2, "column_sum", "input");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += a.data()[r * d + c];
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor({1, d}, std::move(out)), {a},
      [=](TensorImpl& self) {
        if (double* ga = sink(pa))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += self.grad[c];
      },
      "column_sum");
}

/// Rows of an [n,f] matrix picked by index, in the given order.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  using namespace detail;
  require_rank(a, 2, "gather_rows", "input");
  const std::size_t n = a.dim(0), f = a.dim(1);
  std::vector<double> out(rows.size() * f);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) +
                       " out of range for " + std::to_string(n) + " rows");
    }
    std::copy_n(a.data().data() + rows[r] * f, f, out.data() + r * f);
  }
  auto pa = a.impl_ptr();
  return detail::record(
      Tensor({rows.size(), f}, std::move(out)), {a},
      [=](TensorImpl& self) {
        if (double* ga = sink(pa))
          for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < f; ++c)
              ga[rows[r] * f + c] += self.grad[r * f + c];
      },
      "gather_rows");
}

/// Scales each row of [n,f] to unit L2 norm (eps guards zero rows).
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
  using namespace detail;
  require_rank(a, 2, "l2_normalize_rows", "input");
  const std::size_t n = a.dim(0), f = a.dim(1);
  std::vector<double> norms(n), out(n * f);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < f; ++c) s += a.data()[r * f + c] * a.data()[r * f + c];
    norms[r] = std::sqrt(s + eps);
    for (std::size_t c = 0; c < f; ++c) out[r * f + c] = a.data()[r * f + c] / norms[r];
  }
  auto pa = a.impl_ptr();
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::record(
      Tensor({n, f}, std::move(out)), {a},
      [=](TensorImpl& self) {
        double* ga = sink(pa);
        if (!ga) return;
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < f; ++c) dot += self.grad[r * f + c] * (*y)[r * f + c];
          for (std::size_t c = 0; c < f; ++c)
            ga[r * f + c] += (self.grad[r * f + c] - (*y)[r * f + c] * dot) / norms[r];
        }
      },
      "l2_normalize_rows");
}

namespace detail {

// Average-pools `region` of every [n,c] plane into an oh x ow grid.
inline Tensor pool_region(const Tensor& x, const Region& region, std::size_t oh,
                          std::size_t ow, const char* op) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<std::size_t> y0(oh), y1(oh), x0(ow), x1(ow);
  for (std::size_t i = 0; i < oh; ++i) {
    auto [s, e] = bin_range(i, region.height, oh);
    y0[i] = region.row + s;
    y1[i] = region.row + e;
  }
  for (std::size_t j = 0; j < ow; ++j) {
    auto [s, e] = bin_range(j, region.width, ow);
    x0[j] = region.col + s;
    x1[j] = region.col + e;
  }
  std::vector<double> out(n * c * oh * ow);
  const double* src = x.data().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = src + p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t yy = y0[i]; yy < y1[i]; ++yy)
          for (std::size_t xx = x0[j]; xx < x1[j]; ++xx) acc += plane[yy * w + xx];
        out[(p * oh + i) * ow + j] =
            acc / static_cast<double>((y1[i] - y0[i]) * (x1[j] - x0[j]));
      }
  }
  auto px = x.impl_ptr();
  return record(
      Tensor({n, c, oh, ow}, std::move(out)), {x},
      [=](TensorImpl& self) {
        double* gx = sink(px);
        if (!gx) return;
        for (std::size_t p = 0; p < n * c; ++p) {
          double* plane = gx + p * h * w;
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const double g = self.grad[(p * oh + i) * ow + j] /
                               static_cast<double>((y1[i] - y0[i]) * (x1[j] - x0[j]));
              for (std::size_t yy = y0[i]; yy < y1[i]; ++yy)
                for (std::size_t xx = x0[j]; xx < x1[j]; ++xx) plane[yy * w + xx] += g;
            }
        }
      },
      op);
}

}  // namespace detail

/// Averages each plane into an oh x ow grid of near-equal contiguous bins.
inline Tensor adaptive_avg_pool(const Tensor& x, std::size_t oh, std::size_t ow) {
  detail::require_rank(x, 4, "adaptive_avg_pool", "input");
  if (oh < 1 || ow < 1) {
    throw ShapeError("adaptive_avg_pool: target size must be >= 1 per axis");
  }
  return detail::pool_region(x, Region{0, 0, x.dim(2), x.dim(3)}, oh, ow,
                             "adaptive_avg_pool");
}

/// Region-of-interest average pooling onto a fixed oh x ow grid.
inline Tensor roi_avg_pool(const Tensor& feature, const Region& region,
                           std::size_t oh, std::size_t ow) {
  detail::require_rank(feature, 4, "roi_avg_pool", "feature");
  if (region.height < 1 || region.width < 1) {
    throw ShapeError("roi_avg_pool: empty region");
  }
  if (region.row + region.height > feature.dim(2) ||
      region.col + region.width > feature.dim(3)) {
    throw ShapeError("roi_avg_pool: region exceeds feature map " +
                     shape_str(feature.shape()));
  }
  if (oh < 1 || ow < 1) throw ShapeError("roi_avg_pool: output size must be >= 1");
  return detail::pool_region(feature, region, oh, ow, "roi_avg_pool");
}

/// Stacks NCHW tensors along the channel axis.
inline Tensor channel_concat(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("channel_concat: no inputs");
  const auto& ref = inputs.front();
  detail::require_rank(ref, 4, "channel_concat", "input");
  const std::size_t n = ref.dim(0), h = ref.dim(2), w = ref.dim(3);
  std::size_t c_total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& t = inputs[i];
    detail::require_rank(t, 4, "channel_concat", "input");
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw ShapeError("channel_concat: input " + std::to_string(i) + " " +
                       shape_str(t.shape()) + " disagrees with " +
                       shape_str(ref.shape()) + " outside the channel axis");
    }
    c_total += t.dim(1);
  }
  const std::size_t plane = h * w;
  std::vector<double> out(n * c_total * plane);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : inputs) {
    offsets.push_back(off);
    const std::size_t c = t.dim(1);
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(t.data().data() + b * c * plane, c * plane,
                  out.data() + (b * c_total + off) * plane);
    off += c;
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> parents;
  for (const auto& t : inputs) parents.push_back(t.impl_ptr());
  return detail::record(
      Tensor({n, c_total, h, w}, std::move(out)), inputs,
      [=](detail::TensorImpl& self) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
          double* g = detail::sink(parents[i]);
          if (!g) continue;
          const std::size_t c = parents[i]->shape[1];
          for (std::size_t b = 0; b < n; ++b) {
            const double* src = self.grad.data() + (b * c_total + offsets[i]) * plane;
            double* dst = g + b * c * plane;
            for (std::size_t k = 0; k < c * plane; ++k) dst[k] += src[k];
          }
        }
      },
      "channel_concat");
}

/// Channels [begin, end) of an NCHW tensor.
inline Tensor channel_slice(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 4, "channel_slice", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (begin >= end || end > c) {
    throw ShapeError("channel_slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + std::to_string(c) +
                     " channels");
  }
  const std::size_t cs = end - begin;
  std::vector<double> out(n * cs * plane);
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(x.data().data() + (b * c + begin) * plane, cs * plane,
                out.data() + b * cs * plane);
  auto px = x.impl_ptr();
  return detail::record(
      Tensor({n, cs, x.dim(2), x.dim(3)}, std::move(out)), {x},
      [=](detail::TensorImpl& self) {
        double* g = detail::sink(px);
        if (!g) return;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t k = 0; k < cs * plane; ++k)
            g[(b * c + begin) * plane + k] += self.grad[b * cs * plane + k];
      },
      "channel_slice");
}

/// Per-sample pick among same-shape candidates: out[b] = candidates[choice[b]][b].
/// The choice itself carries no gradient.
inline Tensor batch_select(const std::vector<Tensor>& candidates,
                           const std::vector<std::size_t>& choice) {
  if (candidates.empty()) throw ShapeError("batch_select: no candidates");
  const Shape shape = candidates.front().shape();
  for (const auto& c : candidates) {
    if (c.shape() != shape) {
      throw ShapeError("batch_select: candidate " + shape_str(c.shape()) +
                       " vs " + shape_str(shape));
    }
  }
  const std::size_t n = shape.at(0);
  if (choice.size() != n) {
    throw ShapeError("batch_select: " + std::to_string(choice.size()) +
                     " choices for batch of " + std::to_string(n));
  }
  const std::size_t per = shape_numel(shape) / n;
  std::vector<double> out(n * per);
  for (std::size_t b = 0; b < n; ++b) {
    if (choice[b] >= candidates.size()) {
      throw ShapeError("batch_select: choice out of range");
    }
    std::copy_n(candidates[choice[b]].data().data() + b * per, per,
                out.data() + b * per);
  }
  std::vector<std::shared_ptr<detail::TensorImpl>> parents;
  for (const auto& c : candidates) parents.push_back(c.impl_ptr());
  return detail::record(
      Tensor(shape, std::move(out)), candidates,
      [=](detail::TensorImpl& self) {
        for (std::size_t b = 0; b < n; ++b) {
          double* g = detail::sink(parents[choice[b]]);
          if (!g) continue;
          for (std::size_t k = 0; k < per; ++k) g[b * per + k] += self.grad[b * per + k];
        }
      },
      "batch_select");
}

/// Row-wise softmax of [N,K] logits.
inline Tensor softmax(const Tensor& logits) {
  detail::require_rank(logits, 2, "softmax", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = logits.data().data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (out[r * k + c] = std::exp(z[c] - mx));
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] /= s;
  }
  auto px = logits.impl_ptr();
  auto probs = std::make_shared<std::vector<double>>(out);
  return detail::record(
      Tensor({n, k}, std::move(out)), {logits},
      [=](detail::TensorImpl& self) {
        double* g = detail::sink(px);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < k; ++c) dot += self.grad[r * k + c] * (*probs)[r * k + c];
          for (std::size_t c = 0; c < k; ++c)
            g[r * k + c] += (*probs)[r * k + c] * (self.grad[r * k + c] - dot);
        }
      },
      "softmax");
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  detail::require_dim(labels.size(), n, "softmax_cross_entropy", "label count");
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[r]) +
                       " outside [0," + std::to_string(k) + ")");
    }
    const double* z = logits.data().data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - mx);
    const double log_s = std::log(s);
    for (std::size_t c = 0; c < k; ++c) (*probs)[r * k + c] = std::exp(z[c] - mx - log_s);
    total += -(z[labels[r]] - mx - log_s);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto px = logits.impl_ptr();
  return detail::record(
      Tensor({1}, {total * inv_n}), {logits},
      [=](detail::TensorImpl& self) {
        double* g = detail::sink(px);
        if (!g) return;
        const double up = self.grad[0] * inv_n;
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < k; ++c)
            g[r * k + c] += up * ((*probs)[r * k + c] -
                                  (static_cast<int>(c) == labels[r] ? 1.0 : 0.0));
      },
      "softmax_cross_entropy");
}

}  // namespace roadsafe
