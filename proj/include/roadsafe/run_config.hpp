#pragma once

// One JSON document configuring every CLI subcommand. All keys are
// optional; unknown keys at any level are rejected so typos fail loudly.

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "roadsafe/dam.hpp"
#include "roadsafe/domain_adapt.hpp"
#include "roadsafe/error.hpp"
#include "roadsafe/manifest.hpp"
#include "roadsafe/synth.hpp"
#include "roadsafe/train.hpp"

namespace roadsafe {

struct PipelineParams {
  double cell_size_m = 30.0;
  SplitFractions split;
  std::size_t kmeans_max_iterations = 100;
  int tile_zoom = 19;
  int tile_size_px = 400;
};

struct SynthParams {
  std::size_t n_per_class = 100;
  std::size_t image_size = 64;
  std::size_t jitter_px = 0;
  Domain style = Domain::source;
  std::size_t clutter_blocks = 6;
};

struct TrainParams {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  double lr0 = 1e-4;
  std::size_t decay_every = 10;
  double decay_factor = 0.5;
  std::size_t eval_batch_size = 32;
  std::optional<double> stop_at_val_accuracy;
};

struct DaParams {
  double lambda = 1.0;
  bool baseline_loss = false;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr0 = 1e-4;
  std::size_t decay_every = 10;
  double decay_factor = 0.5;
  bool normalize_features = true;
  double feature_scale = 1.0;
  bool target_in_classification = true;
};

struct EvalParams {
  std::string split = "test";  // train | val | test | all
  std::size_t batch_size = 32;
};

struct CamParams {
  std::size_t class_index = 1;
};

/// Input locations; outputs always go to run_dir.
struct PathParams {
  std::string accidents;
  std::string cells;
  std::string grid;
  std::string manifest;
  std::string images;
  std::string target_manifest;
  std::string target_images;
  std::string val_manifest;
  std::string val_images;
  std::string checkpoint;
  std::string image;
  std::string predictions;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "run";
  PipelineParams pipeline;
  SynthParams synth;
  DamConfig model;
  TrainParams train;
  DaParams da;
  EvalParams eval;
  CamParams cam;
  PathParams paths;

  TrainOptions train_options() const {
    TrainOptions t;
    t.epochs = train.epochs;
    t.batch_size = train.batch_size;
    t.lr0 = train.lr0;
    t.decay_every = train.decay_every;
    t.decay_factor = train.decay_factor;
    t.seed = seed;
    t.eval_batch_size = train.eval_batch_size;
    t.stop_at_val_accuracy = train.stop_at_val_accuracy;
    return t;
  }

  DaTrainOptions da_options() const {
    DaTrainOptions o;
    o.base.epochs = da.epochs;
    o.base.batch_size = da.batch_size;
    o.base.lr0 = da.lr0;
    o.base.decay_every = da.decay_every;
    o.base.decay_factor = da.decay_factor;
    o.base.seed = seed;
    o.base.eval_batch_size = train.eval_batch_size;
    o.lambda = da.lambda;
    o.baseline_loss = da.baseline_loss;
    o.normalize_features = da.normalize_features;
    o.feature_scale = da.feature_scale;
    o.target_in_classification = da.target_in_classification;
    return o;
  }

  SynthOptions synth_options() const {
    SynthOptions o;
    o.n_per_class = synth.n_per_class;
    o.height = o.width = synth.image_size;
    o.jitter_px = synth.jitter_px;
    o.style = synth.style;
    o.seed = seed;
    o.clutter_blocks = synth.clutter_blocks;
    return o;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json stop = c.train.stop_at_val_accuracy ? json(*c.train.stop_at_val_accuracy) : json(nullptr);
  return {
      {"seed", c.seed},
      {"run_dir", c.run_dir},
      {"pipeline",
       {{"cell_size_m", c.pipeline.cell_size_m},
        {"split", {{"train", c.pipeline.split.train}, {"val", c.pipeline.split.val}, {"test", c.pipeline.split.test}}},
        {"kmeans_max_iterations", c.pipeline.kmeans_max_iterations},
        {"tile_zoom", c.pipeline.tile_zoom},
        {"tile_size_px", c.pipeline.tile_size_px}}},
      {"synth",
       {{"n_per_class", c.synth.n_per_class},
        {"image_size", c.synth.image_size},
        {"jitter_px", c.synth.jitter_px},
        {"style", to_string(c.synth.style)},
        {"clutter_blocks", c.synth.clutter_blocks}}},
      {"model", to_json(c.model)},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr0", c.train.lr0},
        {"decay_every", c.train.decay_every},
        {"decay_factor", c.train.decay_factor},
        {"eval_batch_size", c.train.eval_batch_size},
        {"stop_at_val_accuracy", stop}}},
      {"da",
       {{"lambda", c.da.lambda},
        {"baseline_loss", c.da.baseline_loss},
        {"epochs", c.da.epochs},
        {"batch_size", c.da.batch_size},
        {"lr0", c.da.lr0},
        {"decay_every", c.da.decay_every},
        {"decay_factor", c.da.decay_factor},
        {"normalize_features", c.da.normalize_features},
        {"feature_scale", c.da.feature_scale},
        {"target_in_classification", c.da.target_in_classification}}},
      {"eval", {{"split", c.eval.split}, {"batch_size", c.eval.batch_size}}},
      {"cam", {{"class_index", c.cam.class_index}}},
      {"paths",
       {{"accidents", c.paths.accidents},
        {"cells", c.paths.cells},
        {"grid", c.paths.grid},
        {"manifest", c.paths.manifest},
        {"images", c.paths.images},
        {"target_manifest", c.paths.target_manifest},
        {"target_images", c.paths.target_images},
        {"val_manifest", c.paths.val_manifest},
        {"val_images", c.paths.val_images},
        {"checkpoint", c.paths.checkpoint},
        {"image", c.paths.image},
        {"predictions", c.paths.predictions}}},
  };
}

namespace detail {

// Recursively rejects keys absent from `known`. The model section has its
// own parser and is skipped here.
inline void check_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (path == "model") continue;
    if (known.at(key).is_object()) check_keys(value, known.at(key), path);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, to_json(c), "");
  try {
    detail::read(j, "seed", c.seed);
    detail::read(j, "run_dir", c.run_dir);
    if (j.contains("pipeline")) {
      const auto& p = j.at("pipeline");
      detail::read(p, "cell_size_m", c.pipeline.cell_size_m);
      detail::read(p, "kmeans_max_iterations", c.pipeline.kmeans_max_iterations);
      detail::read(p, "tile_zoom", c.pipeline.tile_zoom);
      detail::read(p, "tile_size_px", c.pipeline.tile_size_px);
      if (p.contains("split")) {
        const auto& s = p.at("split");
        detail::read(s, "train", c.pipeline.split.train);
        detail::read(s, "val", c.pipeline.split.val);
        detail::read(s, "test", c.pipeline.split.test);
      }
    }
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      detail::read(s, "n_per_class", c.synth.n_per_class);
      detail::read(s, "image_size", c.synth.image_size);
      detail::read(s, "jitter_px", c.synth.jitter_px);
      detail::read(s, "clutter_blocks", c.synth.clutter_blocks);
      if (s.contains("style")) c.synth.style = parse_domain(s.at("style").get<std::string>());
    }
    if (j.contains("model")) c.model = dam_config_from_json(j.at("model"));
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::read(t, "epochs", c.train.epochs);
      detail::read(t, "batch_size", c.train.batch_size);
      detail::read(t, "lr0", c.train.lr0);
      detail::read(t, "decay_every", c.train.decay_every);
      detail::read(t, "decay_factor", c.train.decay_factor);
      detail::read(t, "eval_batch_size", c.train.eval_batch_size);
      if (t.contains("stop_at_val_accuracy") && !t.at("stop_at_val_accuracy").is_null()) {
        c.train.stop_at_val_accuracy = t.at("stop_at_val_accuracy").get<double>();
      }
    }
    if (j.contains("da")) {
      const auto& d = j.at("da");
      detail::read(d, "lambda", c.da.lambda);
      detail::read(d, "baseline_loss", c.da.baseline_loss);
      detail::read(d, "epochs", c.da.epochs);
      detail::read(d, "batch_size", c.da.batch_size);
      detail::read(d, "lr0", c.da.lr0);
      detail::read(d, "decay_every", c.da.decay_every);
      detail::read(d, "decay_factor", c.da.decay_factor);
      detail::read(d, "normalize_features", c.da.normalize_features);
      detail::read(d, "feature_scale", c.da.feature_scale);
      detail::read(d, "target_in_classification", c.da.target_in_classification);
    }
    if (j.contains("eval")) {
      detail::read(j.at("eval"), "split", c.eval.split);
      detail::read(j.at("eval"), "batch_size", c.eval.batch_size);
    }
    if (j.contains("cam")) detail::read(j.at("cam"), "class_index", c.cam.class_index);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      detail::read(p, "accidents", c.paths.accidents);
      detail::read(p, "cells", c.paths.cells);
      detail::read(p, "grid", c.paths.grid);
      detail::read(p, "manifest", c.paths.manifest);
      detail::read(p, "images", c.paths.images);
      detail::read(p, "target_manifest", c.paths.target_manifest);
      detail::read(p, "target_images", c.paths.target_images);
      detail::read(p, "val_manifest", c.paths.val_manifest);
      detail::read(p, "val_images", c.paths.val_images);
      detail::read(p, "checkpoint", c.paths.checkpoint);
      detail::read(p, "image", c.paths.image);
      detail::read(p, "predictions", c.paths.predictions);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const DataError& e) {  // enum parse failures
    throw ConfigError(std::string("config: ") + e.what());
  }
  const auto& e = c.eval.split;
  if (e != "train" && e != "val" && e != "test" && e != "all") {
    throw ConfigError("config: eval.split must be train, val, test or all");
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace roadsafe
