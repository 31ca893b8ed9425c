#pragma once

// Dataset manifest: ordered image entries, serialized as JSON lines. The
// first line is a header object carrying the generator version and seed.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadsafe/error.hpp"

namespace roadsafe {

inline constexpr int kManifestVersion = 1;

enum class Domain { source, target };
enum class Split { train, val, test };

inline std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }
inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}
inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw DataError("manifest: unknown domain '" + s + "'");
}
inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("manifest: unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string image;
  int label = 0;  // 0 safe, 1 dangerous
  Domain domain = Domain::source;
  std::int64_t cell = -1;
  Split split = Split::train;
  bool pseudo = false;  // label produced by a model, not ground truth

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string generator = "roadsafe";
  std::vector<ManifestEntry> entries;

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [&](const auto& e) { return e.label == label; }));
  }

  DatasetManifest filtered(Split split) const {
    DatasetManifest out{seed, generator, {}};
    for (const auto& e : entries)
      if (e.split == split) out.entries.push_back(e);
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (e.label != 0 && e.label != 1) {
        throw DataError("manifest: label must be 0 or 1 for " + e.image);
      }
      if (!seen.insert(e.image).second) {
        throw DataError("manifest: duplicate image reference " + e.image);
      }
    }
  }
};

inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  m.validate();
  nlohmann::json header{{"generator", m.generator}, {"version", kManifestVersion},
                        {"seed", m.seed}};
  os << header.dump() << '\n';
  for (const auto& e : m.entries) {
    nlohmann::json j{{"image", e.image},
                     {"label", e.label},
                     {"domain", to_string(e.domain)},
                     {"cell", e.cell},
                     {"split", to_string(e.split)}};
    if (e.pseudo) j["pseudo"] = true;
    os << j.dump() << '\n';
  }
}

inline DatasetManifest read_manifest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("manifest: empty");
  DatasetManifest m;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("version", 0) != kManifestVersion) {
      throw DataError("manifest: unsupported version");
    }
    m.seed = header.at("seed").get<std::uint64_t>();
    m.generator = header.value("generator", std::string("roadsafe"));
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.image = j.at("image").get<std::string>();
      e.label = j.at("label").get<int>();
      e.domain = parse_domain(j.at("domain").get<std::string>());
      e.cell = j.at("cell").get<std::int64_t>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.pseudo = j.value("pseudo", false);
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("manifest: ") + ex.what());
  }
  m.validate();
  return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write manifest: " + path);
  write_manifest(os, m);
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open manifest: " + path);
  return read_manifest(is);
}

/// Downsamples the majority class to the minority count by seeded uniform
/// sampling without replacement. Survivors keep their relative order.
inline DatasetManifest balance(const DatasetManifest& m, std::uint64_t seed) {
  const std::size_t n_safe = m.count(0), n_danger = m.count(1);
  if (n_safe == 0 || n_danger == 0) {
    throw DataError("balance: a class is absent (safe " + std::to_string(n_safe) +
                    ", dangerous " + std::to_string(n_danger) + ")");
  }
  const int majority = n_safe > n_danger ? 0 : 1;
  const std::size_t keep = std::min(n_safe, n_danger);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (m.entries[i].label == majority) pool.push_back(i);
  std::vector<bool> keep_mask(m.entries.size(), true);
  if (pool.size() > keep) {
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = keep; i < pool.size(); ++i) keep_mask[pool[i]] = false;
  }
  DatasetManifest out{m.seed, m.generator, {}};
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (keep_mask[i]) out.entries.push_back(m.entries[i]);
  return out;
}

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

/// Stratified seeded split assignment; per class the first
/// round(train*n) shuffled entries go to train, the next round(val*n) to val.
inline void assign_splits(DatasetManifest& m, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::mt19937_64 rng(seed);
  for (int label : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].label == label) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
    const auto n_val = std::min(idx.size() - n_train,
                                static_cast<std::size_t>(std::llround(f.val * n)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      m.entries[idx[k]].split = k < n_train ? Split::train
                                : k < n_train + n_val ? Split::val
                                                      : Split::test;
    }
  }
}

}  // namespace roadsafe
