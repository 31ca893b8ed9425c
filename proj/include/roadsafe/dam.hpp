#pragma once

// Deep attention model: a residual backbone (global network) plus a local
// network that scores ROI-pooled subregions of the conv-2 map. The most
// confident subregion's local feature map is pooled to the conv-4 grid and
// channel-concatenated onto the global stream before the last stage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadsafe/error.hpp"
#include "roadsafe/nn_ops.hpp"
#include "roadsafe/optim.hpp"
#include "roadsafe/tensor.hpp"

namespace roadsafe {

enum class SchemeKind { HS, VS, SQ };

inline std::string to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::HS: return "HS";
    case SchemeKind::VS: return "VS";
    default: return "SQ";
  }
}

inline SchemeKind parse_scheme_kind(const std::string& s) {
  if (s == "HS") return SchemeKind::HS;
  if (s == "VS") return SchemeKind::VS;
  if (s == "SQ") return SchemeKind::SQ;
  throw ConfigError("unknown subregion scheme '" + s + "' (expected HS, VS or SQ)");
}

struct SubregionScheme {
  SchemeKind kind = SchemeKind::SQ;
  std::size_t count = 4;
  friend bool operator==(const SubregionScheme&, const SubregionScheme&) = default;
};

struct DamConfig {
  std::size_t input_channels = 3;
  std::size_t input_size = 64;
  std::size_t stem_channels = 16;                            // conv 1
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};  // conv 2..5
  std::vector<std::size_t> local_channels{16, 16};           // conv_1^l, conv_2^l
  std::vector<SubregionScheme> schemes{{SchemeKind::SQ, 4}};
  std::size_t pooled_size = 7;
  std::size_t feature_dim = 64;
  std::size_t num_classes = 2;
  bool use_local = true;  // false: plain backbone, no attention branch
  std::size_t attach_stage = 2;  // backbone stage the subregions are cut from
  double local_loss_weight = 1.0;
  bool da_mode = false;
  std::vector<std::size_t> da_global_channels{48, 32};  // conv_1^g, conv_2^g (1x1)
  std::vector<std::size_t> da_local_channels{16, 8};    // conv_1^l', conv_2^l'

  const std::vector<std::size_t>& active_local_channels() const {
    return da_mode ? da_local_channels : local_channels;
  }

  void validate() const {
    auto positive = [](const std::vector<std::size_t>& v, std::size_t n, const char* what) {
      if (v.size() != n) throw ConfigError(std::string(what) + " must list " + std::to_string(n) + " widths");
      for (auto x : v)
        if (x < 1) throw ConfigError(std::string(what) + " widths must be >= 1");
    };
    positive(stage_channels, 4, "stage_channels");
    positive(local_channels, 2, "local_channels");
    positive(da_global_channels, 2, "da_global_channels");
    positive(da_local_channels, 2, "da_local_channels");
    if (stem_channels < 1 || input_channels < 1) throw ConfigError("channel widths must be >= 1");
    if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
    if (num_classes != 2) throw ConfigError("num_classes must be 2");
    if (use_local && schemes.empty()) throw ConfigError("at least one subregion scheme is required");
    for (const auto& s : schemes)
      if (s.count < 1) throw ConfigError("scheme count must be >= 1");
    if (attach_stage != 2 && attach_stage != 3) throw ConfigError("attach_stage must be 2 or 3");
    if (pooled_size < 1) throw ConfigError("pooled_size must be >= 1");
    if (input_size < 16) throw ConfigError("input_size must be >= 16");
    if (local_loss_weight < 0) throw ConfigError("local_loss_weight must be >= 0");
  }

  /// Spatial size after stage `s` (1 = stem). Stem and conv 2..4 halve.
  std::size_t spatial_after(std::size_t s) const {
    std::size_t hw = input_size;
    for (std::size_t i = 1; i <= std::min<std::size_t>(s, 4); ++i) hw = (hw + 1) / 2;
    return hw;
  }

  std::size_t fused_channels() const {
    const std::size_t local = use_local ? active_local_channels()[1] : 0;
    return stage_channels[2] + local;
  }
};

inline nlohmann::json to_json(const DamConfig& c) {
  nlohmann::json schemes = nlohmann::json::array();
  for (const auto& s : c.schemes) schemes.push_back({{"kind", to_string(s.kind)}, {"count", s.count}});
  return {{"input_channels", c.input_channels},
          {"input_size", c.input_size},
          {"stem_channels", c.stem_channels},
          {"stage_channels", c.stage_channels},
          {"local_channels", c.local_channels},
          {"schemes", schemes},
          {"pooled_size", c.pooled_size},
          {"feature_dim", c.feature_dim},
          {"num_classes", c.num_classes},
          {"use_local", c.use_local},
          {"attach_stage", c.attach_stage},
          {"local_loss_weight", c.local_loss_weight},
          {"da_mode", c.da_mode},
          {"da_global_channels", c.da_global_channels},
          {"da_local_channels", c.da_local_channels}};
}

/// Reads a model config; keys not listed in to_json are rejected.
inline DamConfig dam_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  DamConfig c;
  const auto known = to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    c.input_channels = j.value("input_channels", c.input_channels);
    c.input_size = j.value("input_size", c.input_size);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.local_channels = j.value("local_channels", c.local_channels);
    c.pooled_size = j.value("pooled_size", c.pooled_size);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.use_local = j.value("use_local", c.use_local);
    c.attach_stage = j.value("attach_stage", c.attach_stage);
    c.local_loss_weight = j.value("local_loss_weight", c.local_loss_weight);
    c.da_mode = j.value("da_mode", c.da_mode);
    c.da_global_channels = j.value("da_global_channels", c.da_global_channels);
    c.da_local_channels = j.value("da_local_channels", c.da_local_channels);
    if (j.contains("schemes")) {
      c.schemes.clear();
      for (const auto& s : j.at("schemes")) {
        for (const auto& [key, _] : s.items())
          if (key != "kind" && key != "count") throw ConfigError("unknown scheme key '" + key + "'");
        c.schemes.push_back({parse_scheme_kind(s.at("kind").get<std::string>()),
                             s.value("count", std::size_t{4})});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Subregions.

struct TaggedRegion {
  Region region;
  SchemeKind kind;
};

/// Subregions of an h x w map, scheme by scheme in the given order. HS gives
/// full-width bands, VS full-height bands, SQ an r x r block grid (r*r = N).
inline std::vector<TaggedRegion> partition_regions(std::size_t h, std::size_t w,
                                                   const std::vector<SubregionScheme>& schemes) {
  std::vector<TaggedRegion> out;
  for (const auto& s : schemes) {
    const std::size_t n = s.count;
    if (n < 1) throw ConfigError("partition_regions: count must be >= 1");
    switch (s.kind) {
      case SchemeKind::HS:
        if (h < n) throw ConfigError("partition_regions: HS with N=" + std::to_string(n) + " needs height >= N, got " + std::to_string(h));
        for (std::size_t i = 0; i < n; ++i) {
          auto [a, b] = bin_range(i, h, n);
          out.push_back({{a, 0, b - a, w}, s.kind});
        }
        break;
      case SchemeKind::VS:
        if (w < n) throw ConfigError("partition_regions: VS with N=" + std::to_string(n) + " needs width >= N, got " + std::to_string(w));
        for (std::size_t i = 0; i < n; ++i) {
          auto [a, b] = bin_range(i, w, n);
          out.push_back({{0, a, h, b - a}, s.kind});
        }
        break;
      case SchemeKind::SQ: {
        const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (r * r != n) throw ConfigError("partition_regions: SQ count " + std::to_string(n) + " is not a perfect square");
        if (h < r || w < r) throw ConfigError("partition_regions: SQ grid " + std::to_string(r) + "x" + std::to_string(r) + " exceeds map extent");
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < r; ++j) {
            auto [y0, y1] = bin_range(i, h, r);
            auto [x0, x1] = bin_range(j, w, r);
            out.push_back({{y0, x0, y1 - y0, x1 - x0}, s.kind});
          }
        break;
      }
    }
  }
  return out;
}

/// argmax over regions of the region's top class probability; ties go to
/// the lowest index.
inline std::size_t select_region(const std::vector<std::vector<double>>& probabilities) {
  if (probabilities.empty()) throw ConfigError("select_region: no regions");
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t r = 0; r < probabilities.size(); ++r) {
    if (probabilities[r].empty()) throw ConfigError("select_region: region without probabilities");
    const double score = *std::max_element(probabilities[r].begin(), probabilities[r].end());
    if (score > best_score) {
      best_score = score;
      best = r;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Parameters.

namespace detail {

inline void add_conv(ParamStore& ps, const std::string& name, std::size_t co, std::size_t ci,
                     std::size_t k, std::mt19937_64& rng, double gain = 2.0) {
  ps.add(name + ".weight", he_normal({co, ci, k, k}, ci * k * k, rng, gain));
  ps.add(name + ".bias", Tensor::zeros({co}, true));
}

inline void add_linear(ParamStore& ps, const std::string& name, std::size_t out, std::size_t in,
                       std::mt19937_64& rng, double gain = 1.0) {
  ps.add(name + ".weight", he_normal({out, in}, in, rng, gain));
  ps.add(name + ".bias", Tensor::zeros({out}, true));
}

inline std::string stage_name(std::size_t s) { return "conv" + std::to_string(s); }

}  // namespace detail

/// Seeded initialization of every layer named by `config`.
inline ParamStore init_dam_params(const DamConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore ps;
  detail::add_conv(ps, "conv1", config.stem_channels, config.input_channels, 3, rng);
  std::size_t in = config.stem_channels;
  for (std::size_t s = 2; s <= 5; ++s) {
    const std::size_t c = config.stage_channels[s - 2];
    std::size_t stage_in = in;
    if (s == 5) {
      stage_in = config.fused_channels();
      if (config.da_mode) {
        detail::add_conv(ps, "g.conv1", config.da_global_channels[0], stage_in, 1, rng);
        detail::add_conv(ps, "g.conv2", config.da_global_channels[1], config.da_global_channels[0], 1, rng);
        stage_in = config.da_global_channels[1];
      }
    }
    detail::add_conv(ps, detail::stage_name(s) + ".down", c, stage_in, 3, rng);
    detail::add_conv(ps, detail::stage_name(s) + ".res", c, c, 3, rng, 0.5);
    in = c;
  }
  if (config.use_local) {
    const auto& lc = config.active_local_channels();
    const std::size_t attach_c =
        config.attach_stage == 2 ? config.stage_channels[0] : config.stage_channels[1];
    detail::add_conv(ps, "local.conv1", lc[0], attach_c, 3, rng);
    detail::add_conv(ps, "local.conv2", lc[1], lc[0], 3, rng);
    detail::add_linear(ps, "local.fc", config.num_classes, lc[1], rng);
  }
  detail::add_linear(ps, "fc", config.feature_dim, config.stage_channels[3], rng);
  detail::add_linear(ps, "classifier", config.num_classes, config.feature_dim, rng);
  return ps;
}

/// Names of parameters that receive gradients from the training loss.
inline bool is_trainable(const DamConfig& config, const std::string& name) {
  if (name.rfind("local.fc.", 0) == 0) return config.local_loss_weight > 0.0;
  return true;
}

// ---------------------------------------------------------------------------
// Forward pass.

struct LocalOutput {
  Tensor logits;       // [N, K]
  Tensor probabilities;  // [N, K]
  Tensor feature_map;  // conv_2^l output [N, C, p, p]
};

/// Local network on one subregion: ROI pool -> conv_1^l -> relu -> conv_2^l
/// -> relu -> global average pool -> fc_l -> softmax.
inline LocalOutput local_forward(const Tensor& attach_map, const Region& region,
                                 const ParamStore& ps, const DamConfig& config) {
  const auto p = config.pooled_size;
  auto x = roi_avg_pool(attach_map, region, p, p);
  x = relu(conv2d(x, ps.at("local.conv1.weight"), ps.at("local.conv1.bias"), 1, 1));
  auto fmap = relu(conv2d(x, ps.at("local.conv2.weight"), ps.at("local.conv2.bias"), 1, 1));
  auto pooled = flatten(adaptive_avg_pool(fmap, 1, 1));
  auto logits = linear(pooled, ps.at("local.fc.weight"), ps.at("local.fc.bias"));
  return {logits, softmax(logits), fmap};
}

struct ForwardTrace {
  std::vector<TaggedRegion> regions;
  std::vector<std::vector<std::vector<double>>> region_probabilities;  // [sample][region][class]
  std::vector<std::size_t> selected;  // per sample
  Tensor selected_local_logits;       // [N, K], undefined without local branch
  Tensor fused_map;                   // conv-4 output with local channels appended
  Tensor final_map;                   // last conv stage output, pre-pool
  Tensor feature;                     // [N, d]
  Tensor logits;                      // [N, K]
  std::size_t conv4_channels = 0;
  std::size_t local_channels = 0;
};

namespace detail {

inline Tensor stage_forward(const Tensor& x, const ParamStore& ps, std::size_t s, std::size_t stride) {
  const auto name = stage_name(s);
  auto h = relu(conv2d(x, ps.at(name + ".down.weight"), ps.at(name + ".down.bias"), stride, 1));
  auto r = relu(conv2d(h, ps.at(name + ".res.weight"), ps.at(name + ".res.bias"), 1, 1));
  return add(h, r);
}

}  // namespace detail

/// Full forward pass for an [N, C, S, S] image batch.
inline ForwardTrace dam_forward(const Tensor& images, const ParamStore& ps, const DamConfig& config) {
  if (images.rank() != 4 || images.dim(1) != config.input_channels ||
      images.dim(2) != config.input_size || images.dim(3) != config.input_size) {
    throw ShapeError("dam_forward: images " + shape_str(images.shape()) + " do not match input " +
                     std::to_string(config.input_channels) + "x" + std::to_string(config.input_size) +
                     "x" + std::to_string(config.input_size));
  }
  const std::size_t n = images.dim(0);
  ForwardTrace tr;
  auto x = relu(conv2d(images, ps.at("conv1.weight"), ps.at("conv1.bias"), 2, 1));
  auto c2 = detail::stage_forward(x, ps, 2, 2);
  auto c3 = detail::stage_forward(c2, ps, 3, 2);
  auto c4 = detail::stage_forward(c3, ps, 4, 2);
  tr.conv4_channels = c4.dim(1);

  Tensor fused = c4;
  if (config.use_local) {
    const Tensor& attach = config.attach_stage == 2 ? c2 : c3;
    tr.regions = partition_regions(attach.dim(2), attach.dim(3), config.schemes);
    std::vector<LocalOutput> locals;
    locals.reserve(tr.regions.size());
    for (const auto& r : tr.regions) locals.push_back(local_forward(attach, r.region, ps, config));

    tr.region_probabilities.assign(n, {});
    tr.selected.assign(n, 0);
    const std::size_t k = config.num_classes;
    for (std::size_t b = 0; b < n; ++b) {
      for (const auto& lo : locals) {
        const auto pr = lo.probabilities.data().subspan(b * k, k);
        tr.region_probabilities[b].emplace_back(pr.begin(), pr.end());
      }
      tr.selected[b] = select_region(tr.region_probabilities[b]);
    }
    std::vector<Tensor> maps, logits;
    for (const auto& lo : locals) {
      maps.push_back(lo.feature_map);
      logits.push_back(lo.logits);
    }
    auto chosen = batch_select(maps, tr.selected);
    tr.selected_local_logits = batch_select(logits, tr.selected);
    tr.local_channels = chosen.dim(1);
    fused = channel_concat({c4, adaptive_avg_pool(chosen, c4.dim(2), c4.dim(3))});
  }
  tr.fused_map = fused;

  Tensor g = fused;
  if (config.da_mode) {
    g = relu(conv2d(g, ps.at("g.conv1.weight"), ps.at("g.conv1.bias"), 1, 0));
    g = relu(conv2d(g, ps.at("g.conv2.weight"), ps.at("g.conv2.bias"), 1, 0));
  }
  tr.final_map = detail::stage_forward(g, ps, 5, 1);
  auto pooled = flatten(adaptive_avg_pool(tr.final_map, 1, 1));
  tr.feature = linear(pooled, ps.at("fc.weight"), ps.at("fc.bias"));
  tr.logits = linear(tr.feature, ps.at("classifier.weight"), ps.at("classifier.bias"));
  return tr;
}

/// Cross-entropy on the fused prediction plus, when the attention branch is
/// present, local_loss_weight times cross-entropy of the selected subregion's
/// local prediction (the only signal that reaches fc_l).
inline Tensor classification_loss(const ForwardTrace& tr, const std::vector<int>& labels,
                                  const DamConfig& config) {
  auto loss = softmax_cross_entropy(tr.logits, labels);
  if (config.use_local && config.local_loss_weight > 0.0) {
    loss = add(loss, scale(softmax_cross_entropy(tr.selected_local_logits, labels),
                           config.local_loss_weight));
  }
  return loss;
}

}  // namespace roadsafe
