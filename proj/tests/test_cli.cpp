#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "roadsafe/cli.hpp"

using namespace roadsafe;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("roadsafe_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

// Every file under the run directory is listed with its size and hash, and
// nothing else is listed.
void expect_declared(const fs::path& dir) {
  const auto listing = read_json(dir / "artifacts.json");
  std::set<std::string> declared;
  for (const auto& f : listing.at("files")) {
    const std::string rel = f.at("path");
    declared.insert(rel);
    ASSERT_TRUE(fs::exists(dir / rel)) << rel;
    EXPECT_EQ(f.at("bytes").get<std::uintmax_t>(), fs::file_size(dir / rel)) << rel;
    EXPECT_EQ(f.at("fnv1a64").get<std::string>(), cli::fnv1a64_file(dir / rel)) << rel;
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "artifacts.json") continue;
    EXPECT_TRUE(declared.count(rel)) << "orphan output " << rel;
  }
}

// Small, fast model and schedule for end-to-end runs.
std::string small_config(const fs::path& dir, bool da_mode = false) {
  nlohmann::json j{
      {"run_dir", (dir / "run").string()},
      {"synth", {{"n_per_class", 12}, {"image_size", 32}}},
      {"model", {{"input_size", 32}, {"da_mode", da_mode}}},
      {"train", {{"epochs", 2}, {"lr0", 0.01}}},
      {"da", {{"epochs", 1}, {"batch_size", 4}, {"lr0", 0.01}, {"feature_scale", 0.3}}},
  };
  const auto path = dir / "config.json";
  write(path, j.dump(2));
  return path.string();
}

}  // namespace

TEST(RunConfig, DefaultsMatchFullScaleProtocol) {
  RunConfig c;
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_DOUBLE_EQ(c.train.lr0, 1e-4);
  EXPECT_EQ(c.train.epochs, 50u);
  EXPECT_EQ(c.train.decay_every, 10u);
  EXPECT_DOUBLE_EQ(c.train.decay_factor, 0.5);
  EXPECT_EQ(c.da.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.da.lr0, 1e-4);
  EXPECT_DOUBLE_EQ(c.pipeline.cell_size_m, 30.0);
  EXPECT_DOUBLE_EQ(c.pipeline.split.train, 0.70);
  const auto t = c.train_options();
  EXPECT_EQ(t.batch_size, 4u);
  EXPECT_EQ(c.da_options().base.batch_size, 16u);
}

TEST(RunConfig, JsonRoundTripAndUnknownKeys) {
  RunConfig c;
  c.seed = 11;
  c.da.lambda = 0.25;
  c.model.schemes = {{SchemeKind::HS, 3}};
  c.train.stop_at_val_accuracy = 0.9;
  const auto j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_THROW(run_config_from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", {{"depth", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"pipeline", {{"split", {{"dev", 0.1}}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"eval", {{"split", "holdout"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"synth", {{"style", "mars"}}}}), ConfigError);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const auto r = run({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, 0);

  const auto dir = scratch("usage");
  write(dir / "bad.json", R"({"trian": {}})");
  EXPECT_EQ(run({"synth", "--config", (dir / "bad.json").string()}).code, 1);
  // required input not given anywhere
  EXPECT_EQ(run({"train", "--run-dir", (dir / "r").string()}).code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  const auto dir = scratch("data");
  EXPECT_EQ(run({"ingest", "--run-dir", (dir / "r").string(), "--accidents", (dir / "missing.csv").string()}).code, 2);
  write(dir / "header_only.csv", "id,date,time,day_of_week,latitude,longitude,vehicles,casualties\n");
  const auto r = run({"ingest", "--run-dir", (dir / "r").string(), "--accidents", (dir / "header_only.csv").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no records"), std::string::npos);
}

TEST(Cli, LabelMatchesThresholdOracle) {
  const auto dir = scratch("label");
  write(dir / "scores.csv", "safety_score\n0\n0\n1\n9\n10\n");
  nlohmann::json cfg{{"run_dir", (dir / "run").string()}, {"paths", {{"cells", (dir / "scores.csv").string()}}}};
  write(dir / "c.json", cfg.dump());
  ASSERT_EQ(run({"label", "--config", (dir / "c.json").string()}).code, 0);

  // exhaustive oracle: best split of the sorted scores by within-cluster SS
  const std::vector<double> s{0, 0, 1, 9, 10};
  double best = 1e300;
  std::size_t split = 0;
  for (std::size_t k = 1; k < s.size(); ++k) {
    auto ss = [&](std::size_t a, std::size_t b) {
      double m = 0;
      for (std::size_t i = a; i < b; ++i) m += s[i];
      m /= static_cast<double>(b - a);
      double v = 0;
      for (std::size_t i = a; i < b; ++i) v += (s[i] - m) * (s[i] - m);
      return v;
    };
    const double v = ss(0, k) + ss(k, s.size());
    if (v < best) {
      best = v;
      split = k;
    }
  }
  ASSERT_EQ(split, 3u);

  std::ifstream is(dir / "run" / "labels.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "col,row,center_lat,center_lon,safety_score,label");
  std::vector<int> labels;
  while (std::getline(is, line)) labels.push_back(line.back() - '0');
  ASSERT_EQ(labels.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(labels[i], i >= split ? 1 : 0) << i;
  const auto km = read_json(dir / "run" / "kmeans.json");
  EXPECT_NEAR(km.at("low_centroid").get<double>(), 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(km.at("high_centroid").get<double>(), 9.5);
  const auto m = load_manifest((dir / "run" / "manifest.jsonl").string());
  EXPECT_EQ(m.count(1), 2u);
  expect_declared(dir / "run");
}

TEST(Cli, TileUrlsNeedKey) {
  const auto dir = scratch("tiles");
  write(dir / "cells.csv", "col,row,center_lat,center_lon,safety_score\n0,0,51.5847,0.2793,0\n1,0,51.5847,0.2797,4\n");
  const std::vector<std::string> args{"label", "--run-dir", (dir / "run").string(), "--cells",
                                      (dir / "cells.csv").string(), "--tile-urls"};
  unsetenv("STATIC_MAPS_KEY");
  const auto missing = run(args);
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("STATIC_MAPS_KEY"), std::string::npos);
  setenv("STATIC_MAPS_KEY", "test-key", 1);
  ASSERT_EQ(run(args).code, 0);
  unsetenv("STATIC_MAPS_KEY");
  const auto urls = slurp(dir / "run" / "tile_urls.csv");
  EXPECT_NE(urls.find("center=51.584700,0.279300"), std::string::npos);
  EXPECT_NE(urls.find("maptype=satellite"), std::string::npos);
}

TEST(Cli, AccidentPipelineConservesRecords) {
  const auto dir = scratch("accidents");
  std::ostringstream csv;
  csv << "id,date,time,day_of_week,latitude,longitude,vehicles,casualties\n";
  csv << "A1,01/02/2015,18:00,1,51.5847,0.2793,2,1\n";
  csv << "A2,01/02/2015,08:30,1,51.5850,0.2800,1,1\n";
  csv << "A3,03/02/2015,09:15,3,51.5849,0.2796,3,2\n";
  csv << "bad,03/02/2015,09:15,3,abc,0.2796,3,2\n";
  csv << "A4,04/02/2015,23:59,4,51.5847,0.2793,1,0\n";
  write(dir / "acc.csv", csv.str());
  const auto acc = (dir / "acc.csv").string();
  ASSERT_EQ(run({"ingest", "--run-dir", (dir / "run").string(), "--accidents", acc}).code, 0);
  const auto report = read_json(dir / "run" / "ingest_report.json");
  EXPECT_EQ(report.at("records"), 4);
  EXPECT_EQ(report.at("skipped"), 1);
  // the cleaned file parses back to the same records
  std::ifstream cleaned(dir / "run" / "records.csv");
  const auto again = ingest_accidents(cleaned);
  EXPECT_EQ(again.records.size(), 4u);
  EXPECT_EQ(again.records[0].latitude, 51.5847);
  EXPECT_EQ(again.records[1].seconds_of_day, 8 * 3600 + 30 * 60);

  ASSERT_EQ(run({"grid", "--run-dir", (dir / "run").string(), "--accidents", acc}).code, 0);
  const auto cells = cli::read_csv((dir / "run" / "cells.csv").string());
  const auto grid = cli::load_grid((dir / "run" / "grid.json").string());
  EXPECT_EQ(cells.rows.size(), grid.cell_count());
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < cells.rows.size(); ++i) total += cli::parse_uint_field(cells.at(i, "safety_score"), "s");
  EXPECT_EQ(total, 4u);

  ASSERT_EQ(run({"label", "--run-dir", (dir / "run").string(), "--cells", (dir / "run" / "cells.csv").string()}).code,
            0);
  expect_declared(dir / "run");
}

TEST(Cli, TrainTwiceWithSameSeedGivesIdenticalMetrics) {
  const auto dir = scratch("train");
  const auto cfg = small_config(dir);
  ASSERT_EQ(run({"synth", "--config", cfg, "--run-dir", (dir / "data").string()}).code, 0);
  const auto manifest = (dir / "data" / "manifest.jsonl").string();
  for (const char* name : {"a", "b"}) {
    const auto r = run({"train", "--config", cfg, "--seed", "7", "--run-dir", (dir / name).string(), "--manifest",
                        manifest});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto a = slurp(dir / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  EXPECT_EQ(read_json(dir / "a" / "config.json").at("seed"), 7);
  EXPECT_EQ(a.substr(0, a.find('\n')), "epoch,split,loss,accuracy");
  expect_declared(dir / "a");
  expect_declared(dir / "data");

  // a different seed changes the run
  ASSERT_EQ(run({"train", "--config", cfg, "--seed", "8", "--run-dir", (dir / "c").string(), "--manifest", manifest})
                .code,
            0);
  EXPECT_NE(a, slurp(dir / "c" / "metrics.csv"));
}

namespace {

// synth -> train -> eval (all cells) -> cam -> map-export in one directory.
void full_pipeline(const fs::path& dir, const std::string& cfg) {
  const auto run_dir = (dir / "run").string();
  ASSERT_EQ(run({"synth", "--config", cfg}).code, 0);
  const auto manifest = run_dir + "/manifest.jsonl";
  ASSERT_EQ(run({"train", "--config", cfg, "--manifest", manifest}).code, 0);
  const auto ckpt = run_dir + "/model.ckpt";
  nlohmann::json eval_cfg = read_json(cfg);
  eval_cfg["eval"] = {{"split", "all"}};
  write(dir / "eval.json", eval_cfg.dump());
  const auto e = run({"eval", "--config", (dir / "eval.json").string(), "--checkpoint", ckpt, "--manifest", manifest});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto image = run_dir + "/images/img_000001.ppm";
  ASSERT_EQ(run({"cam", "--config", cfg, "--checkpoint", ckpt, "--image", image, "--class", "1"}).code, 0);
  // 24 synthetic cells laid out on a 6 x 4 grid
  GridSpec g;
  g.ref_lat = 51.5;
  g.columns = 6;
  g.rows = 4;
  write(dir / "grid.json", cli::grid_to_json(g).dump());
  const auto m = run({"map-export", "--config", cfg, "--grid", (dir / "grid.json").string(), "--predictions",
                      run_dir + "/predictions.csv"});
  ASSERT_EQ(m.code, 0) << m.err;
}

}  // namespace

TEST(Cli, EndToEndRunIsBitReproducible) {
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    const auto dir = scratch("e2e");
    const auto cfg = small_config(dir);
    full_pipeline(dir, cfg);
    if (HasFatalFailure()) return;
    const auto run_dir = dir / "run";
    expect_declared(run_dir);
    const auto listing = read_json(run_dir / "artifacts.json");
    std::map<std::string, std::string> files;
    for (const auto& f : listing.at("files")) files[f.at("path")] = slurp(run_dir / f.at("path").get<std::string>());
    if (pass == 0) {
      first = files;
      // spot checks on formats
      const auto map = load_pnm((run_dir / "safety_map.ppm").string());
      EXPECT_EQ(map.width, 6u);
      EXPECT_EQ(map.height, 4u);
      const auto cam_img = load_pnm((run_dir / "cam.pgm").string());
      EXPECT_EQ(cam_img.channels, 1u);
      EXPECT_EQ(cam_img.width, 32u);
      const auto table = cli::read_csv((run_dir / "safety_map.csv").string());
      EXPECT_EQ(table.rows.size(), 24u);
      const auto metrics = read_json(run_dir / "metrics.json");
      EXPECT_EQ(metrics.at("count"), 24);
      EXPECT_EQ(metrics.at("confusion").at("positive_class"), "safe");
    } else {
      EXPECT_EQ(files.size(), first.size());
      for (const auto& [name, bytes] : files) EXPECT_TRUE(first.at(name) == bytes) << name << " differs";
    }
  }
}

TEST(Cli, DomainAdaptationCommands) {
  const auto dir = scratch("da");
  const auto cfg = small_config(dir, true);
  ASSERT_EQ(run({"synth", "--config", cfg, "--run-dir", (dir / "src").string()}).code, 0);
  nlohmann::json tcfg = read_json(cfg);
  tcfg["synth"]["style"] = "target";
  write(dir / "target.json", tcfg.dump());
  ASSERT_EQ(run({"synth", "--config", (dir / "target.json").string(), "--seed", "5", "--run-dir",
                 (dir / "tgt").string()})
                .code,
            0);
  const auto src = (dir / "src" / "manifest.jsonl").string();
  const auto tgt = (dir / "tgt" / "manifest.jsonl").string();
  ASSERT_EQ(run({"train", "--config", cfg, "--run-dir", (dir / "m").string(), "--manifest", src}).code, 0);
  const auto ckpt = (dir / "m" / "model.ckpt").string();
  const auto p = run({"pseudo-label", "--config", cfg, "--run-dir", (dir / "p").string(), "--checkpoint", ckpt,
                      "--target-manifest", tgt});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto pm = load_manifest((dir / "p" / "pseudo_manifest.jsonl").string());
  for (const auto& e : pm.entries) EXPECT_TRUE(e.pseudo);
  const auto d = run({"train-da", "--config", cfg, "--run-dir", (dir / "d").string(), "--checkpoint", ckpt,
                      "--manifest", src, "--target-manifest", (dir / "p" / "pseudo_manifest.jsonl").string(),
                      "--target-images", (dir / "tgt").string(), "--val-manifest", tgt});
  ASSERT_EQ(d.code, 0) << d.err;
  const auto report = read_json(dir / "d" / "train_da_report.json");
  EXPECT_GT(report.at("steps").get<int>(), 0);
  expect_declared(dir / "d");
  // a non-adaptive checkpoint cannot seed adaptive training
  write(dir / "plain.json", nlohmann::json{{"model", {{"input_size", 32}}}, {"train", {{"epochs", 1}}}}.dump());
  ASSERT_EQ(run({"train", "--config", (dir / "plain.json").string(), "--run-dir", (dir / "plain").string(),
                 "--manifest", src})
                .code,
            0);
  EXPECT_EQ(run({"train-da", "--config", cfg, "--run-dir", (dir / "d2").string(), "--checkpoint",
                 (dir / "plain" / "model.ckpt").string(), "--manifest", src, "--target-manifest",
                 (dir / "p" / "pseudo_manifest.jsonl").string(), "--target-images", (dir / "tgt").string()})
                .code,
            1);
}
