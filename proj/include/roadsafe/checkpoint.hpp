#pragma once

// Parameter checkpoint container, format version 1. Plain text so reruns
// can be diffed byte-for-byte:
//
//   roadsafe-checkpoint 1
//   config <byte count>
//   <config document, exactly <byte count> bytes>
//   params <parameter count>
//   param <name> <rank> <extent 0> ... <extent rank-1>
//   <all values, row-major, "%.17g", single spaces, one line>
//   ... (one param/values pair per parameter, in store order)
//   end
//
// %.17g round-trips IEEE-754 doubles exactly, so load(save(p)) == p.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "roadsafe/error.hpp"
#include "roadsafe/optim.hpp"

namespace roadsafe {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string config;  // embedded configuration document (JSON)
  ParamStore params;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_checkpoint(std::ostream& os, const ParamStore& params,
                             const std::string& config) {
  os << "roadsafe-checkpoint " << kCheckpointVersion << '\n';
  os << "config " << config.size() << '\n' << config << '\n';
  os << "params " << params.size() << '\n';
  for (const auto& [name, t] : params) {
    os << "param " << name << ' ' << t.rank();
    for (auto d : t.shape()) os << ' ' << d;
    os << '\n';
    bool first = true;
    for (double v : t.data()) {
      if (!first) os << ' ';
      os << format_double(v);
      first = false;
    }
    os << '\n';
  }
  os << "end\n";
}

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const std::string& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  write_checkpoint(os, params, config);
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  auto fail = [](const std::string& what) -> DataError {
    return DataError("checkpoint: " + what);
  };
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "roadsafe-checkpoint") throw fail("bad magic");
  if (version != kCheckpointVersion) {
    throw fail("unsupported version " + std::to_string(version));
  }
  std::size_t config_bytes = 0;
  if (!(is >> tag >> config_bytes) || tag != "config") throw fail("missing config");
  is.get();  // newline after the byte count
  Checkpoint ck;
  ck.config.resize(config_bytes);
  if (!is.read(ck.config.data(), static_cast<std::streamsize>(config_bytes))) {
    throw fail("truncated config");
  }
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != "params") throw fail("missing params header");
  for (std::size_t p = 0; p < count; ++p) {
    std::string name;
    std::size_t rank = 0;
    if (!(is >> tag >> name >> rank) || tag != "param") throw fail("bad param header");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(is >> d)) throw fail("bad extent for " + name);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
      std::string tok;
      if (!(is >> tok)) throw fail("truncated values for " + name);
      try {
        v = std::stod(tok);
      } catch (const std::exception&) {
        throw fail("bad value '" + tok + "' in " + name);
      }
    }
    ck.params.add(name, Tensor(std::move(shape), std::move(values), true));
  }
  if (!(is >> tag) || tag != "end") throw fail("missing end marker");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace roadsafe
