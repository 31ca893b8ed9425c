#pragma once

// Command-line front end. Each subcommand maps onto one library operation,
// writes its outputs under the run directory, and records them in
// artifacts.json beside the resolved config.json.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "roadsafe/checkpoint.hpp"
#include "roadsafe/domain_adapt.hpp"
#include "roadsafe/eval.hpp"
#include "roadsafe/geo.hpp"
#include "roadsafe/kmeans.hpp"
#include "roadsafe/manifest.hpp"
#include "roadsafe/run_config.hpp"
#include "roadsafe/synth.hpp"
#include "roadsafe/tiles.hpp"
#include "roadsafe/train.hpp"

namespace roadsafe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Shortest decimal that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fnv1a64_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 14];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

/// Output bookkeeping for one invocation.
class Run {
 public:
  Run(std::string command, RunConfig config) : command_(std::move(command)), config_(std::move(config)) {
    dir_ = config_.run_dir;
    fs::create_directories(dir_);
  }

  const RunConfig& config() const { return config_; }
  const fs::path& dir() const { return dir_; }

  /// Path of a new output, declared in the artifact list.
  fs::path output(const std::string& relative) {
    const fs::path p = dir_ / relative;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    produced_.push_back(relative);
    return p;
  }

  void write_json(const std::string& relative, const json& j) {
    std::ofstream os(output(relative), std::ios::binary);
    os << j.dump(2) << "\n";
    if (!os) throw DataError("failed writing " + relative);
  }

  /// config.json holds the resolved config of the latest command; earlier
  /// artifact entries of other commands in the same directory are kept.
  void finish() {
    {
      std::ofstream os(dir_ / "config.json", std::ios::binary);
      os << to_json(config_).dump(2) << "\n";
      if (!os) throw DataError("failed writing config.json");
    }
    std::map<std::string, json> files;
    const fs::path listing = dir_ / "artifacts.json";
    if (fs::exists(listing)) {
      try {
        std::ifstream is(listing);
        const json previous = json::parse(is);
        for (const auto& f : previous.at("files")) files[f.at("path").get<std::string>()] = f;
      } catch (const json::exception& e) {
        throw DataError("unreadable artifacts.json: " + std::string(e.what()));
      }
    }
    auto add = [&](const std::string& rel, const std::string& cmd) {
      const fs::path p = dir_ / rel;
      files[rel] = {{"path", rel}, {"command", cmd}, {"bytes", fs::file_size(p)}, {"fnv1a64", fnv1a64_file(p)}};
    };
    for (const auto& rel : produced_) add(rel, command_);
    add("config.json", command_);
    json out{{"files", json::array()}};
    for (auto& [_, f] : files) out["files"].push_back(f);
    std::ofstream os(listing, std::ios::binary);
    os << out.dump(2) << "\n";
    if (!os) throw DataError("failed writing artifacts.json");
  }

 private:
  std::string command_;
  RunConfig config_;
  fs::path dir_;
  std::vector<std::string> produced_;
};

// ---------------------------------------------------------------------------
// Small readers.

inline std::string require_path(const std::string& value, const char* key) {
  if (value.empty()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    throw ConfigError(std::string("missing input: set paths.") + key + " or pass --" + flag);
  }
  return value;
}

inline std::string images_root(const std::string& explicit_root, const std::string& manifest_path) {
  if (!explicit_root.empty()) return explicit_root;
  const auto parent = fs::path(manifest_path).parent_path();
  return parent.empty() ? "." : parent.string();
}

struct CsvTable {
  std::map<std::string, std::size_t> columns;
  std::vector<std::vector<std::string>> rows;

  bool has(const std::string& c) const { return columns.count(c) > 0; }
  const std::string& at(std::size_t row, const std::string& c) const {
    const auto& r = rows[row];
    const auto i = columns.at(c);
    if (i >= r.size()) throw DataError("csv row " + std::to_string(row + 2) + ": missing column " + c);
    return r[i];
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": empty file");
  const auto header = detail::split_csv_line(line);
  for (std::size_t i = 0; i < header.size(); ++i) t.columns[detail::trim(header[i])] = i;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    t.rows.push_back(detail::split_csv_line(line));
  }
  return t;
}

inline double parse_double_field(const std::string& s, const std::string& what) {
  const auto v = detail::parse_decimal(s);
  if (!v) throw DataError("bad " + what + " '" + s + "'");
  return *v;
}

inline std::uint64_t parse_uint_field(const std::string& s, const std::string& what) {
  const auto t = detail::trim(s);
  std::uint64_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) throw DataError("bad " + what + " '" + s + "'");
  return v;
}

inline json grid_to_json(const GridSpec& g) {
  return {{"ref_lat", g.ref_lat},         {"ref_lon", g.ref_lon}, {"earth_radius_m", g.earth_radius_m},
          {"cell_size_m", g.cell_size_m}, {"x_min", g.x_min},     {"y_min", g.y_min},
          {"columns", g.columns},         {"rows", g.rows}};
}

inline GridSpec load_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read grid " + path);
  try {
    const auto j = json::parse(is);
    GridSpec g;
    g.ref_lat = j.at("ref_lat").get<double>();
    g.ref_lon = j.at("ref_lon").get<double>();
    g.earth_radius_m = j.at("earth_radius_m").get<double>();
    g.cell_size_m = j.at("cell_size_m").get<double>();
    g.x_min = j.at("x_min").get<double>();
    g.y_min = j.at("y_min").get<double>();
    g.columns = j.at("columns").get<std::size_t>();
    g.rows = j.at("rows").get<std::size_t>();
    if (g.columns == 0 || g.rows == 0) throw DataError("grid " + path + ": empty grid");
    return g;
  } catch (const json::exception& e) {
    throw DataError("grid " + path + ": " + e.what());
  }
}

inline std::string two_digits(int v) {
  char b[8];
  std::snprintf(b, sizeof b, "%02d", v);
  return b;
}

inline std::string date_str(const CalendarDate& d) {
  return two_digits(d.day) + "/" + two_digits(d.month) + "/" + std::to_string(d.year);
}

inline std::string time_str(int s) {
  return two_digits(s / 3600) + ":" + two_digits(s / 60 % 60) + ":" + two_digits(s % 60);
}

inline IngestResult ingest_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read accidents " + path);
  return ingest_accidents(is);
}

inline LabeledImages images_for(const DatasetManifest& m, const std::string& root, const std::string& split) {
  if (split == "all") return load_images(m, root);
  return load_images(m, root, parse_split(split));
}

// ---------------------------------------------------------------------------
// Subcommands. Each reads its inputs from the resolved config.

inline void cmd_ingest(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto res = ingest_file(require_path(c.paths.accidents, "accidents"));
  std::ofstream os(run.output("records.csv"), std::ios::binary);
  os << "id,date,time,day_of_week,latitude,longitude,vehicles,casualties\n";
  for (const auto& r : res.records) {
    os << r.id << ',' << date_str(r.date) << ',' << time_str(r.seconds_of_day) << ',' << r.day_of_week << ','
       << shortest(r.latitude) << ',' << shortest(r.longitude) << ',' << r.vehicles << ',' << r.casualties << '\n';
  }
  os.close();
  run.write_json("ingest_report.json",
                 {{"records", res.records.size()}, {"skipped", res.skipped}, {"warnings", res.warnings}});
  out << "ingested " << res.records.size() << " records, skipped " << res.skipped << "\n";
}

inline void cmd_grid(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto res = ingest_file(require_path(c.paths.accidents, "accidents"));
  const auto assignment = build_grid(res.records, c.pipeline.cell_size_m);
  const auto cells = score_cells(assignment);
  run.write_json("grid.json", grid_to_json(assignment.grid));
  std::ofstream os(run.output("cells.csv"), std::ios::binary);
  os << "col,row,center_lat,center_lon,safety_score\n";
  char buf[128];
  std::uint64_t total = 0;
  for (const auto& cell : cells) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.8f,%.8f,%llu\n", cell.col, cell.row, cell.center_lat, cell.center_lon,
                  static_cast<unsigned long long>(cell.safety_score));
    os << buf;
    total += cell.safety_score;
  }
  out << "grid " << assignment.grid.columns << "x" << assignment.grid.rows << ", " << total << " records in "
      << cells.size() << " cells\n";
}

inline void cmd_label(Run& run, std::ostream& out, bool tile_urls) {
  const auto& c = run.config();
  const auto table = read_csv(require_path(c.paths.cells, "cells"));
  if (!table.has("safety_score")) throw DataError("cells file lacks a safety_score column");
  if (table.rows.empty()) throw DataError("cells file has no rows");
  std::vector<Cell> cells(table.rows.size());
  const bool located = table.has("col") && table.has("row");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& cell = cells[i];
    cell.safety_score = parse_uint_field(table.at(i, "safety_score"), "safety_score");
    if (located) {
      cell.col = parse_uint_field(table.at(i, "col"), "col");
      cell.row = parse_uint_field(table.at(i, "row"), "row");
    } else {
      cell.col = i;
    }
    if (table.has("center_lat")) cell.center_lat = parse_double_field(table.at(i, "center_lat"), "center_lat");
    if (table.has("center_lon")) cell.center_lon = parse_double_field(table.at(i, "center_lon"), "center_lon");
  }
  LabelingConfig lc;
  lc.max_iterations = c.pipeline.kmeans_max_iterations;
  lc.seed = c.seed;
  const auto km = label_cells(cells, lc);
  for (const auto& w : km.warnings) out << "warning: " << w << "\n";

  std::ofstream os(run.output("labels.csv"), std::ios::binary);
  os << "col,row,center_lat,center_lon,safety_score,label\n";
  char buf[160];
  DatasetManifest m;
  m.seed = c.seed;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    const int label = *cell.label == SafetyLabel::dangerous ? 1 : 0;
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.8f,%.8f,%llu,%d\n", cell.col, cell.row, cell.center_lat,
                  cell.center_lon, static_cast<unsigned long long>(cell.safety_score), label);
    os << buf;
    ManifestEntry e;
    e.image = "cells/" + std::to_string(cell.col) + "_" + std::to_string(cell.row) + ".ppm";
    e.label = label;
    e.cell = static_cast<std::int64_t>(i);
    m.entries.push_back(e);
  }
  os.close();
  save_manifest(run.output("manifest.jsonl").string(), m);
  run.write_json("kmeans.json", {{"low_centroid", km.low_centroid},
                                 {"high_centroid", km.high_centroid},
                                 {"iterations", km.iterations},
                                 {"degenerate", km.degenerate},
                                 {"warnings", km.warnings},
                                 {"safe", m.count(0)},
                                 {"dangerous", m.count(1)}});
  if (tile_urls) {
    const auto key = env_key_source();
    std::ofstream ts(run.output("tile_urls.csv"), std::ios::binary);
    ts << "col,row,url\n";
    for (const auto& cell : cells)
      ts << cell.col << ',' << cell.row << ',' << tile_url(cell, c.pipeline.tile_zoom, c.pipeline.tile_size_px, key)
         << '\n';
  }
  out << "labeled " << cells.size() << " cells: " << m.count(0) << " safe, " << m.count(1) << " dangerous\n";
}

inline void cmd_balance(Run& run, std::ostream& out) {
  const auto& c = run.config();
  auto m = balance(load_manifest(require_path(c.paths.manifest, "manifest")), c.seed);
  assign_splits(m, c.pipeline.split, c.seed);
  save_manifest(run.output("manifest.jsonl").string(), m);
  out << "balanced to " << m.count(0) << " safe / " << m.count(1) << " dangerous\n";
}

inline void cmd_synth(Run& run, std::ostream& out) {
  const auto& c = run.config();
  auto set = synth_generate(c.synth_options());
  assign_splits(set.manifest, c.pipeline.split, c.seed);
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    auto& e = set.manifest.entries[i];
    e.image = "images/" + e.image;
    save_pnm(run.output(e.image).string(), set.samples[i].image);
  }
  save_manifest(run.output("manifest.jsonl").string(), set.manifest);
  out << "generated " << set.samples.size() << " " << to_string(c.synth.style) << " images\n";
}

inline void cmd_train(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto manifest_path = require_path(c.paths.manifest, "manifest");
  const auto m = load_manifest(manifest_path);
  const auto root = images_root(c.paths.images, manifest_path);
  const auto train = load_images(m, root, Split::train);
  const auto val = load_images(m, root, Split::val);
  const auto res = train_dam(train, val, c.model, c.train_options());
  for (const auto& w : res.warnings) out << "warning: " << w << "\n";
  save_model(run.output("model.ckpt").string(), res.params, c.model);
  save_metrics_csv(run.output("metrics.csv").string(), res.metrics);
  run.write_json("train_report.json", {{"epochs_run", res.epochs_run},
                                       {"train_images", train.size()},
                                       {"val_images", val.size()},
                                       {"warnings", res.warnings}});
  out << "trained " << res.epochs_run << " epochs";
  if (!val.empty()) out << ", final val accuracy " << res.metrics.back().accuracy;
  out << "\n";
}

inline void cmd_pseudo_label(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto model = load_model(require_path(c.paths.checkpoint, "checkpoint"));
  const auto manifest_path = require_path(c.paths.target_manifest, "target_manifest");
  const auto m = load_manifest(manifest_path);
  const auto images = load_images(m, images_root(c.paths.target_images, manifest_path));
  const auto pseudo = pseudo_label(m, images, model.params, model.config);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < m.entries.size(); ++i) agree += pseudo.entries[i].label == m.entries[i].label;
  save_manifest(run.output("pseudo_manifest.jsonl").string(), pseudo);
  const double agreement = static_cast<double>(agree) / static_cast<double>(m.entries.size());
  run.write_json("pseudo_report.json", {{"entries", m.entries.size()},
                                        {"dangerous", pseudo.count(1)},
                                        {"agreement_with_input_labels", agreement}});
  out << "pseudo-labeled " << m.entries.size() << " target images (agreement with input labels " << agreement
      << ")\n";
}

inline void cmd_train_da(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto src_path = require_path(c.paths.manifest, "manifest");
  const auto tgt_path = require_path(c.paths.target_manifest, "target_manifest");
  const auto src_m = load_manifest(src_path);
  const auto tgt_m = load_manifest(tgt_path);
  if (std::any_of(tgt_m.entries.begin(), tgt_m.entries.end(), [](const auto& e) { return !e.pseudo; })) {
    out << "warning: target manifest has entries without pseudo labels; their labels are used as given\n";
  }
  const auto source = load_images(src_m, images_root(c.paths.images, src_path), Split::train);
  const auto target = load_images(tgt_m, images_root(c.paths.target_images, tgt_path), Split::train);
  LabeledImages val;
  if (!c.paths.val_manifest.empty()) {
    const auto vm = load_manifest(c.paths.val_manifest);
    val = load_images(vm, images_root(c.paths.val_images, c.paths.val_manifest), Split::val);
  }
  DamConfig config = c.model;
  std::optional<ParamStore> init;
  if (!c.paths.checkpoint.empty()) {
    auto loaded = load_model(c.paths.checkpoint);
    config = loaded.config;
    init = std::move(loaded.params);
  }
  const auto res = train_dam_da(source, target, val, config, c.da_options(), std::move(init));
  for (const auto& w : res.warnings) out << "warning: " << w << "\n";
  save_model(run.output("model.ckpt").string(), res.params, config);
  save_metrics_csv(run.output("metrics.csv").string(), res.metrics);
  run.write_json("train_da_report.json", {{"epochs_run", res.epochs_run},
                                          {"steps", res.steps},
                                          {"degenerate_batches", res.degenerate_batches},
                                          {"lambda", c.da.lambda},
                                          {"baseline_loss", c.da.baseline_loss},
                                          {"warnings", res.warnings}});
  out << "domain-adaptive training: " << res.epochs_run << " epochs, " << res.steps << " steps\n";
}

inline void cmd_eval(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto model = load_model(require_path(c.paths.checkpoint, "checkpoint"));
  const auto manifest_path = require_path(c.paths.manifest, "manifest");
  const auto m = load_manifest(manifest_path);
  const auto root = images_root(c.paths.images, manifest_path);
  std::vector<const ManifestEntry*> entries;
  for (const auto& e : m.entries)
    if (c.eval.split == "all" || e.split == parse_split(c.eval.split)) entries.push_back(&e);
  const auto data = images_for(m, root, c.eval.split);
  if (data.empty()) throw DataError("no manifest entries in split '" + c.eval.split + "'");
  const auto pred = predict(data, model.params, model.config, c.eval.batch_size);
  const auto met = metrics(pred.labels, data.labels);

  std::ofstream os(run.output("predictions.csv"), std::ios::binary);
  os << "image,cell,label,predicted,prob_dangerous\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    os << entries[i]->image << ',' << entries[i]->cell << ',' << data.labels[i] << ',' << pred.labels[i] << ','
       << format_double(pred.probabilities[i][1]) << '\n';
  }
  os.close();
  const auto& cf = met.confusion;
  run.write_json("metrics.json", {{"split", c.eval.split},
                                  {"count", data.size()},
                                  {"accuracy", met.accuracy},
                                  {"fpr", met.fpr},
                                  {"precision", met.precision},
                                  {"recall", met.recall},
                                  {"f1", met.f1},
                                  {"loss", pred.loss},
                                  {"undefined",
                                   {{"fpr", met.fpr_undefined},
                                    {"precision", met.precision_undefined},
                                    {"recall", met.recall_undefined},
                                    {"f1", met.f1_undefined}}},
                                  {"confusion",
                                   {{"positive_class", "safe"},
                                    {"tp", cf.tp},
                                    {"fp", cf.fp},
                                    {"tn", cf.tn},
                                    {"fn", cf.fn}}}});
  out << "accuracy " << met.accuracy << ", fpr " << met.fpr << ", precision " << met.precision << ", f1 " << met.f1
      << " on " << data.size() << " images\n";
}

inline void cmd_cam(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto model = load_model(require_path(c.paths.checkpoint, "checkpoint"));
  const auto img = load_pnm(require_path(c.paths.image, "image"));
  if (img.channels != 3 || img.width != model.config.input_size || img.height != model.config.input_size) {
    throw DataError("cam: image must be an RGB " + std::to_string(model.config.input_size) + " square");
  }
  const auto map = cam(images_to_tensor({&img}), model.params, model.config, c.cam.class_index);
  save_pnm(run.output("cam.pgm").string(), cam_to_image(map));
  const auto [px, py] = map.peak();
  run.write_json("cam.json",
                 {{"class_index", c.cam.class_index}, {"peak_x", px}, {"peak_y", py}, {"constant", map.constant}});
  if (map.constant) out << "warning: activation map is constant\n";
  out << "cam peak at (" << px << "," << py << ")\n";
}

inline void cmd_map_export(Run& run, std::ostream& out) {
  const auto& c = run.config();
  const auto grid = load_grid(require_path(c.paths.grid, "grid"));
  const auto table = read_csv(require_path(c.paths.predictions, "predictions"));
  for (const char* col : {"cell", "predicted", "prob_dangerous"})
    if (!table.has(col)) throw DataError(std::string("predictions file lacks column ") + col);
  std::vector<CellPrediction> preds;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto cell = parse_uint_field(table.at(i, "cell"), "cell");
    if (cell >= grid.cell_count()) throw DataError("prediction for cell " + std::to_string(cell) + " outside grid");
    const auto label = parse_uint_field(table.at(i, "predicted"), "predicted");
    preds.push_back({cell % grid.columns, cell / grid.columns, static_cast<int>(label),
                     parse_double_field(table.at(i, "prob_dangerous"), "prob_dangerous")});
  }
  const auto raster = safety_raster(grid, preds);  // validates completeness first
  {
    std::ofstream os(run.output("safety_map.csv"), std::ios::binary);
    write_safety_csv(os, grid, preds);
    if (!os) throw DataError("failed writing safety_map.csv");
  }
  save_pnm(run.output("safety_map.ppm").string(), raster);
  out << "exported " << grid.columns << "x" << grid.rows << " safety map\n";
}

// ---------------------------------------------------------------------------

struct Subcommand {
  const char* name;
  const char* help;
  std::vector<const char*> inputs;  // keys of paths.* exposed as flags
};

inline const std::vector<Subcommand>& subcommands() {
  static const std::vector<Subcommand> s{
      {"ingest", "parse an accident CSV into clean records", {"accidents"}},
      {"grid", "grid the study area and count accidents per cell", {"accidents"}},
      {"label", "bin cell safety scores into safe/dangerous", {"cells"}},
      {"balance", "downsample the majority class and assign splits", {"manifest"}},
      {"synth", "generate a synthetic image dataset", {}},
      {"train", "train the attention model", {"manifest", "images"}},
      {"pseudo-label", "label target images with a trained model", {"checkpoint", "target_manifest", "target_images"}},
      {"train-da",
       "domain-adaptive training on source plus pseudo-labeled target",
       {"manifest", "images", "target_manifest", "target_images", "val_manifest", "val_images", "checkpoint"}},
      {"eval", "score a model on a manifest split", {"checkpoint", "manifest", "images"}},
      {"cam", "class activation map of one image", {"checkpoint", "image"}},
      {"map-export", "write the safety map table and raster", {"grid", "predictions"}},
  };
  return s;
}

inline std::string* path_field(PathParams& p, const std::string& key) {
  static const std::map<std::string, std::string PathParams::*> fields{
      {"accidents", &PathParams::accidents},
      {"cells", &PathParams::cells},
      {"grid", &PathParams::grid},
      {"manifest", &PathParams::manifest},
      {"images", &PathParams::images},
      {"target_manifest", &PathParams::target_manifest},
      {"target_images", &PathParams::target_images},
      {"val_manifest", &PathParams::val_manifest},
      {"val_images", &PathParams::val_images},
      {"checkpoint", &PathParams::checkpoint},
      {"image", &PathParams::image},
      {"predictions", &PathParams::predictions},
  };
  return &(p.*fields.at(key));
}

/// Entry point; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"road-safety mapping from overhead imagery", "roadsafe"};
  app.require_subcommand(1);
  std::string config_path, run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> class_index;
  std::map<std::string, std::string> inputs;
  bool tile_urls = false;
  for (const auto& sc : subcommands()) {
    auto* sub = app.add_subcommand(sc.name, sc.help);
    sub->add_option("--config", config_path, "RunConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--run-dir", run_dir, "output directory (overrides run_dir)");
    for (const char* key : sc.inputs) {
      std::string flag = std::string("--") + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      sub->add_option(flag, inputs[key], std::string("overrides paths.") + key);
    }
    if (std::string(sc.name) == "cam") sub->add_option("--class", class_index, "class index (0 safe, 1 dangerous)");
    if (std::string(sc.name) == "label") {
      sub->add_flag("--tile-urls", tile_urls, "also write static-map tile URLs (needs STATIC_MAPS_KEY)");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  const std::string name = app.get_subcommands().front()->get_name();

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (!run_dir.empty()) config.run_dir = run_dir;
    if (class_index) config.cam.class_index = *class_index;
    for (const auto& [key, value] : inputs)
      if (!value.empty()) *path_field(config.paths, key) = value;

    Run run(name, config);
    static const std::map<std::string, std::function<void(Run&, std::ostream&)>> table{
        {"ingest", cmd_ingest},
        {"grid", cmd_grid},
        {"balance", cmd_balance},
        {"synth", cmd_synth},
        {"train", cmd_train},
        {"pseudo-label", cmd_pseudo_label},
        {"train-da", cmd_train_da},
        {"eval", cmd_eval},
        {"cam", cmd_cam},
        {"map-export", cmd_map_export},
    };
    if (name == "label") {
      cmd_label(run, out, tile_urls);
    } else {
      table.at(name)(run, out);
    }
    run.finish();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const KeyMissing& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace roadsafe::cli
