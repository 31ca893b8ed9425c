#pragma once

// Synthetic overhead tiles. Dangerous tiles carry an intersection motif (two
// crossing road strips), safe tiles a single strip or none. The motif is
// translated by a per-image offset to mimic tile misalignment, and the two
// domain styles use different palettes so source->target shift can be studied.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "roadsafe/error.hpp"
#include "roadsafe/image.hpp"
#include "roadsafe/manifest.hpp"

namespace roadsafe {

using Rgb = std::array<int, 3>;

struct SynthPalette {
  Rgb background;
  Rgb clutter_lo;   // clutter colors drawn per channel from [lo, hi]
  Rgb clutter_hi;
  Rgb road;
  int noise = 10;   // uniform per-pixel noise amplitude
};

inline SynthPalette palette_for(Domain style) {
  if (style == Domain::source) {
    return {{70, 95, 60}, {40, 60, 30}, {120, 140, 110}, {215, 215, 205}, 10};
  }
  return {{120, 90, 70}, {80, 50, 30}, {160, 125, 100}, {150, 170, 220}, 10};
}

struct SynthOptions {
  std::size_t n_per_class = 10;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t jitter_px = 0;
  Domain style = Domain::source;
  std::uint64_t seed = 0;
  std::size_t clutter_blocks = 6;
  double arm_fraction = 0.3;    // half-length of a strip relative to min(h, w)
  double road_fraction = 0.1;   // strip width relative to min(h, w)
  std::string name_prefix = "img";
};

/// Pixel bounding box [x0,x1) x [y0,y1); empty when x0 == x1.
struct PixelBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x0 >= x1 || y0 >= y1; }
  bool contains(double x, double y) const {
    return x >= static_cast<double>(x0) && x < static_cast<double>(x1) &&
           y >= static_cast<double>(y0) && y < static_cast<double>(y1);
  }
};

struct SynthSample {
  Image image;
  int label = 0;
  bool horizontal = false;
  bool vertical = false;
  long center_x = 0;
  long center_y = 0;
  PixelBox motif;
};

struct SynthSet {
  std::vector<SynthSample> samples;
  DatasetManifest manifest;
};

namespace detail {

inline void fill_rect(Image& img, long x0, long y0, long x1, long y1, const Rgb& color) {
  x0 = std::clamp<long>(x0, 0, static_cast<long>(img.width));
  x1 = std::clamp<long>(x1, 0, static_cast<long>(img.width));
  y0 = std::clamp<long>(y0, 0, static_cast<long>(img.height));
  y1 = std::clamp<long>(y1, 0, static_cast<long>(img.height));
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) =
            static_cast<std::uint8_t>(color[c]);
}

inline SynthSample draw_sample(const SynthOptions& opt, int label, std::mt19937_64& rng) {
  const auto pal = palette_for(opt.style);
  const long h = static_cast<long>(opt.height), w = static_cast<long>(opt.width);
  const long side = std::min(h, w);
  const long arm = std::max<long>(2, std::lround(opt.arm_fraction * static_cast<double>(side)));
  const long road = std::max<long>(2, std::lround(opt.road_fraction * static_cast<double>(side)));
  const long jitter = static_cast<long>(opt.jitter_px);

  SynthSample s;
  s.label = label;
  s.image = Image(opt.width, opt.height, 3);
  fill_rect(s.image, 0, 0, w, h, pal.background);

  std::uniform_int_distribution<long> block_size(side / 16 + 2, side / 5 + 2);
  std::uniform_int_distribution<long> pos_x(0, w - 1), pos_y(0, h - 1);
  for (std::size_t b = 0; b < opt.clutter_blocks; ++b) {
    const long bx = pos_x(rng), by = pos_y(rng), bw = block_size(rng), bh = block_size(rng);
    Rgb color;
    for (std::size_t c = 0; c < 3; ++c) {
      color[c] = std::uniform_int_distribution<int>(pal.clutter_lo[c], pal.clutter_hi[c])(rng);
    }
    fill_rect(s.image, bx, by, bx + bw, by + bh, color);
  }

  std::uniform_int_distribution<long> offset(-jitter, jitter);
  s.center_x = w / 2 + offset(rng);
  s.center_y = h / 2 + offset(rng);
  if (label == 1) {
    s.horizontal = s.vertical = true;
  } else {
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);  // none, H, V
    s.horizontal = kind == 1;
    s.vertical = kind == 2;
  }
  const long cx = s.center_x, cy = s.center_y;
  long bx0 = w, by0 = h, bx1 = 0, by1 = 0;
  auto strip = [&](long x0, long y0, long x1, long y1) {
    fill_rect(s.image, x0, y0, x1, y1, pal.road);
    bx0 = std::min(bx0, std::max<long>(0, x0));
    by0 = std::min(by0, std::max<long>(0, y0));
    bx1 = std::max(bx1, std::min(w, x1));
    by1 = std::max(by1, std::min(h, y1));
  };
  if (s.horizontal) strip(cx - arm, cy - road / 2, cx + arm, cy - road / 2 + road);
  if (s.vertical) strip(cx - road / 2, cy - arm, cx - road / 2 + road, cy + arm);
  if (bx1 > bx0 && by1 > by0) {
    s.motif = {static_cast<std::size_t>(bx0), static_cast<std::size_t>(by0),
               static_cast<std::size_t>(bx1), static_cast<std::size_t>(by1)};
  }

  std::uniform_int_distribution<int> noise(-pal.noise, pal.noise);
  for (auto& p : s.image.pixels) p = static_cast<std::uint8_t>(std::clamp(p + noise(rng), 0, 255));
  return s;
}

}  // namespace detail

/// Generates n_per_class tiles of each class, alternating safe/dangerous.
/// Every manifest entry is tagged with the style's domain and split train.
inline SynthSet synth_generate(const SynthOptions& opt) {
  if (opt.n_per_class == 0) throw ConfigError("synth_generate: class count must be positive");
  if (2 * opt.jitter_px >= std::min(opt.height, opt.width)) {
    throw ConfigError("synth_generate: jitter must be below half the image size");
  }
  std::mt19937_64 rng(opt.seed);
  SynthSet out;
  out.manifest.seed = opt.seed;
  for (std::size_t i = 0; i < opt.n_per_class; ++i) {
    for (int label : {0, 1}) {
      auto s = detail::draw_sample(opt, label, rng);
      ManifestEntry e;
      const std::size_t index = out.samples.size();
      char name[64];
      std::snprintf(name, sizeof name, "%s_%06zu.ppm", opt.name_prefix.c_str(), index);
      e.image = name;
      e.label = label;
      e.domain = opt.style;
      e.cell = static_cast<std::int64_t>(index);
      out.samples.push_back(std::move(s));
      out.manifest.entries.push_back(std::move(e));
    }
  }
  return out;
}

/// Writes every sample as a P6 file under `dir`; manifest image refs are
/// relative to `dir`.
inline void write_synth_images(const std::string& dir, const SynthSet& set) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    save_pnm((std::filesystem::path(dir) / set.manifest.entries[i].image).string(),
             set.samples[i].image);
  }
}

}  // namespace roadsafe
