#pragma once

// Evaluation: confusion-based metrics, class activation maps, and the
// safety-map export (CSV table + PPM raster).
//
// Positive class is SAFE (label 0). With that choice the false positive
// rate fp / (fp + tn) is the fraction of truly dangerous samples predicted
// safe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "roadsafe/dam.hpp"
#include "roadsafe/error.hpp"
#include "roadsafe/geo.hpp"
#include "roadsafe/image.hpp"

namespace roadsafe {

inline constexpr int kUnsure = -1;  // abstention in a prediction list

/// Counts (or fractions of a total, e.g. percentages) with safe positive.
struct Confusion {
  double tp = 0;  // safe predicted safe
  double fp = 0;  // dangerous predicted safe
  double tn = 0;  // dangerous predicted dangerous
  double fn = 0;  // safe predicted dangerous
  double unsure_safe = 0;       // safe, no answer
  double unsure_dangerous = 0;  // dangerous, no answer

  double total() const { return tp + fp + tn + fn + unsure_safe + unsure_dangerous; }
  double actual_safe() const { return tp + fn + unsure_safe; }
  double actual_dangerous() const { return fp + tn + unsure_dangerous; }
};

struct Metrics {
  double accuracy = 0;
  double fpr = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  Confusion confusion;
  // Set when the matching ratio had a zero denominator (value reported as 0).
  bool fpr_undefined = false;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

/// Abstentions count toward the total and toward their true class, so they
/// lower accuracy and recall (safe) or the fpr denominator (dangerous).
inline Metrics metrics_from_confusion(const Confusion& c) {
  for (double v : {c.tp, c.fp, c.tn, c.fn, c.unsure_safe, c.unsure_dangerous})
    if (!(v >= 0)) throw DataError("metrics: confusion entries must be >= 0");
  if (!(c.total() > 0)) throw DataError("metrics: no samples");
  Metrics m;
  m.confusion = c;
  auto ratio = [](double num, double den, bool& undefined) {
    if (den == 0) {
      undefined = true;
      return 0.0;
    }
    return num / den;
  };
  m.accuracy = (c.tp + c.tn) / c.total();
  m.fpr = ratio(c.fp, c.actual_dangerous(), m.fpr_undefined);
  m.precision = ratio(c.tp, c.tp + c.fp, m.precision_undefined);
  m.recall = ratio(c.tp, c.actual_safe(), m.recall_undefined);
  m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall, m.f1_undefined);
  return m;
}

inline Confusion confusion_of(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw DataError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DataError("metrics: empty input");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t != 0 && t != 1) throw DataError("metrics: label must be 0 (safe) or 1 (dangerous)");
    if (p != 0 && p != 1 && p != kUnsure) throw DataError("metrics: prediction must be 0, 1 or unsure");
    if (p == kUnsure) {
      (t == 0 ? c.unsure_safe : c.unsure_dangerous) += 1;
    } else if (t == 0) {
      (p == 0 ? c.tp : c.fn) += 1;
    } else {
      (p == 0 ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

inline Metrics metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
  return metrics_from_confusion(confusion_of(predictions, labels));
}

// ---------------------------------------------------------------------------
// Class activation maps.

struct CamMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  bool constant = false;       // raw map had no spread; values are all 0

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  /// Pixel of the maximum; first in row-major order on ties.
  std::pair<std::size_t, std::size_t> peak() const {
    const auto it = std::max_element(values.begin(), values.end());
    const auto i = static_cast<std::size_t>(it - values.begin());
    return {i % width, i / width};
  }
};

/// Bilinear resize with pixel-center alignment and edge clamping.
inline std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t sh,
                                           std::size_t sw, std::size_t dh, std::size_t dw) {
  std::vector<double> out(dh * dw);
  auto coord = [](std::size_t d, std::size_t dn, std::size_t sn) {
    const double s = (static_cast<double>(d) + 0.5) * static_cast<double>(sn) / static_cast<double>(dn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(sn - 1));
  };
  for (std::size_t y = 0; y < dh; ++y) {
    const double sy = coord(y, dh, sh);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const auto y1 = std::min(y0 + 1, sh - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dw; ++x) {
      const double sx = coord(x, dw, sw);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto x1 = std::min(x0 + 1, sw - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = src[y0 * sw + x0] * (1 - fx) + src[y0 * sw + x1] * fx;
      const double bottom = src[y1 * sw + x0] * (1 - fx) + src[y1 * sw + x1] * fx;
      out[y * dw + x] = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

/// CAM of one image ([1,C,S,S] tensor) for `class_index`. The channel
/// weights are row `class_index` of classifier.weight * fc.weight; the
/// weighted sum of the last conv stage is resized to S x S and then
/// min-max normalized, so a non-constant map spans exactly [0, 1].
inline CamMap cam(const Tensor& image, const ParamStore& params, const DamConfig& config,
                  std::size_t class_index) {
  if (class_index >= config.num_classes) {
    throw ConfigError("cam: class index " + std::to_string(class_index) + " >= " +
                      std::to_string(config.num_classes));
  }
  if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("cam: expects a single image [1,C,S,S]");
  NoGradGuard no_grad;
  const auto tr = dam_forward(image, params, config);
  const auto& fmap = tr.final_map;
  const std::size_t c = fmap.dim(1), h = fmap.dim(2), w = fmap.dim(3);
  const auto wc = params.at("classifier.weight").data();  // [K, d]
  const auto wf = params.at("fc.weight").data();          // [d, C]
  const std::size_t d = config.feature_dim;
  std::vector<double> weights(c, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t ch = 0; ch < c; ++ch) weights[ch] += wc[class_index * d + j] * wf[j * c + ch];
  std::vector<double> raw(h * w, 0.0);
  const auto f = fmap.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) raw[i] += weights[ch] * f[ch * h * w + i];

  CamMap out;
  out.height = image.dim(2);
  out.width = image.dim(3);
  out.values = resize_bilinear(raw, h, w, out.height, out.width);
  const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    out.constant = true;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& v : out.values) v = (v - mn) / (mx - mn);
  return out;
}

/// Grayscale image with 255 at the map maximum.
inline Image cam_to_image(const CamMap& m) {
  Image img(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(m.values[i], 0.0, 1.0) * 255.0));
  return img;
}

// ---------------------------------------------------------------------------
// Safety map.

inline constexpr std::uint8_t kDangerousRgb[3] = {220, 50, 47};
inline constexpr std::uint8_t kSafeRgb[3] = {60, 160, 70};

struct CellPrediction {
  std::size_t col = 0;
  std::size_t row = 0;
  int label = 0;  // 0 safe, 1 dangerous
  double prob_dangerous = 0.0;
};

/// Orders predictions row-major (row, then col) after checking that every
/// grid cell appears exactly once.
inline std::vector<CellPrediction> complete_grid(const GridSpec& grid,
                                                 const std::vector<CellPrediction>& preds) {
  std::vector<const CellPrediction*> slot(grid.cell_count(), nullptr);
  for (const auto& p : preds) {
    if (p.col >= grid.columns || p.row >= grid.rows) {
      throw DataError("safety map: cell (" + std::to_string(p.col) + "," + std::to_string(p.row) + ") outside grid");
    }
    if (p.label != 0 && p.label != 1) throw DataError("safety map: label must be 0 or 1");
    auto& s = slot[grid.linear_index(p.col, p.row)];
    if (s) throw DataError("safety map: duplicate cell (" + std::to_string(p.col) + "," + std::to_string(p.row) + ")");
    s = &p;
  }
  std::vector<CellPrediction> out;
  for (std::size_t i = 0; i < slot.size(); ++i) {
    if (!slot[i]) {
      throw DataError("safety map: no prediction for cell (" + std::to_string(i % grid.columns) + "," +
                      std::to_string(i / grid.columns) + ")");
    }
    out.push_back(*slot[i]);
  }
  return out;
}

/// One pixel per cell; raster row 0 is the northernmost grid row.
inline Image safety_raster(const GridSpec& grid, const std::vector<CellPrediction>& preds) {
  const auto cells = complete_grid(grid, preds);
  Image img(grid.columns, grid.rows, 3);
  for (const auto& p : cells) {
    const auto* rgb = p.label == 1 ? kDangerousRgb : kSafeRgb;
    for (std::size_t ch = 0; ch < 3; ++ch) img.at(p.col, grid.rows - 1 - p.row, ch) = rgb[ch];
  }
  return img;
}

inline void write_safety_csv(std::ostream& os, const GridSpec& grid, const std::vector<CellPrediction>& preds) {
  os << "col,row,center_lat,center_lon,label,prob_dangerous\n";
  char buf[160];
  for (const auto& p : complete_grid(grid, preds)) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.8f,%.8f,%s,%.6f\n", p.col, p.row, grid.center_lat(p.row),
                  grid.center_lon(p.col), p.label == 1 ? "dangerous" : "safe", p.prob_dangerous);
    os << buf;
  }
}

struct SafetyMapFiles {
  std::string csv;
  std::string ppm;
};

/// Writes <prefix>.csv and <prefix>.ppm.
inline SafetyMapFiles safety_map_export(const GridSpec& grid, const std::vector<CellPrediction>& preds,
                                        const std::string& prefix) {
  SafetyMapFiles files{prefix + ".csv", prefix + ".ppm"};
  const auto raster = safety_raster(grid, preds);
  std::ofstream os(files.csv, std::ios::binary);
  if (!os) throw DataError("cannot write safety map: " + files.csv);
  write_safety_csv(os, grid, preds);
  if (!os) throw DataError("failed writing safety map: " + files.csv);
  save_pnm(files.ppm, raster);
  return files;
}

}  // namespace roadsafe
