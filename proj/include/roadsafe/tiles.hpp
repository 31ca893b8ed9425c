#pragma once

// Static-maps request construction. No network I/O happens here.

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>

#include "roadsafe/error.hpp"
#include "roadsafe/geo.hpp"

namespace roadsafe {

inline constexpr const char* kStaticMapsKeyEnv = "STATIC_MAPS_KEY";
inline constexpr const char* kStaticMapsEndpoint =
    "https://maps.googleapis.com/maps/api/staticmap";

using KeySource = std::function<std::optional<std::string>()>;

inline KeySource env_key_source(const char* variable = kStaticMapsKeyEnv) {
  return [variable]() -> std::optional<std::string> {
    const char* v = std::getenv(variable);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
}

/// Satellite tile request centered on the cell center (6 decimal places).
inline std::string tile_url(const Cell& cell, int zoom, int size_px,
                            const KeySource& key_source = env_key_source()) {
  if (zoom < 0 || zoom > 21) {
    throw ConfigError("tile_url: zoom " + std::to_string(zoom) + " outside [0,21]");
  }
  if (size_px < 1 || size_px > 640) {
    throw ConfigError("tile_url: size " + std::to_string(size_px) + " outside [1,640]");
  }
  const auto key = key_source ? key_source() : std::nullopt;
  if (!key) {
    throw KeyMissing(std::string("tile_url: no API key; set the ") + kStaticMapsKeyEnv +
                     " environment variable");
  }
  char center[64];
  std::snprintf(center, sizeof center, "%.6f,%.6f", cell.center_lat, cell.center_lon);
  return std::string(kStaticMapsEndpoint) + "?center=" + center +
         "&zoom=" + std::to_string(zoom) + "&size=" + std::to_string(size_px) + "x" +
         std::to_string(size_px) + "&maptype=satellite&key=" + *key;
}

/// Cache location for a fetched tile: <root>/z<zoom>/<col>_<row>.png
inline std::string tile_cache_path(const std::string& root, const Cell& cell, int zoom) {
  return root + "/z" + std::to_string(zoom) + "/" + std::to_string(cell.col) + "_" +
         std::to_string(cell.row) + ".png";
}

}  // namespace roadsafe
