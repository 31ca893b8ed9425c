#pragma once

// Accident ingestion and grid labeling: CSV records -> equirectangular grid
// -> per-cell accident counts (safety scores).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "roadsafe/error.hpp"

namespace roadsafe {

struct CalendarDate {
  int day = 1;
  int month = 1;
  int year = 1970;
  friend bool operator==(const CalendarDate&, const CalendarDate&) = default;
};

struct AccidentRecord {
  std::string id;
  CalendarDate date;
  int seconds_of_day = 0;
  int day_of_week = 1;  // 1..7
  double latitude = 0.0;
  double longitude = 0.0;
  int vehicles = 0;
  int casualties = 0;
};

struct IngestResult {
  std::vector<AccidentRecord> records;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // one per skipped row
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_decimal(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::optional<int> parse_count(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::nullopt;
  try {
    return std::stoi(t);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// dd/mm/yyyy
inline std::optional<CalendarDate> parse_date(const std::string& s) {
  CalendarDate d;
  char a = 0, b = 0;
  std::istringstream is(trim(s));
  if (!(is >> d.day >> a >> d.month >> b >> d.year) || a != '/' || b != '/') return std::nullopt;
  if (!is.eof() && is.peek() != EOF) return std::nullopt;
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31) return std::nullopt;
  return d;
}

// "2:30:00 AM", "18:00", "18:00:00"
inline std::optional<int> parse_time(const std::string& s) {
  std::string t = trim(s);
  int meridiem = 0;  // 0 none, 1 AM, 2 PM
  if (t.size() > 2) {
    std::string tail = t.substr(t.size() - 2);
    std::transform(tail.begin(), tail.end(), tail.begin(), ::toupper);
    if (tail == "AM" || tail == "PM") {
      meridiem = tail == "AM" ? 1 : 2;
      t = trim(t.substr(0, t.size() - 2));
    }
  }
  int h = 0, m = 0, sec = 0;
  char c1 = 0, c2 = 0;
  std::istringstream is(t);
  if (!(is >> h >> c1 >> m) || c1 != ':') return std::nullopt;
  if (is >> c2) {
    if (c2 != ':' || !(is >> sec)) return std::nullopt;
  }
  if (m < 0 || m > 59 || sec < 0 || sec > 59) return std::nullopt;
  if (meridiem) {
    if (h < 1 || h > 12) return std::nullopt;
    h = h % 12 + (meridiem == 2 ? 12 : 0);
  } else if (h < 0 || h > 23) {
    return std::nullopt;
  }
  return h * 3600 + m * 60 + sec;
}

}  // namespace detail

inline const std::vector<std::string>& accident_columns() {
  static const std::vector<std::string> cols{"id", "date", "time", "day_of_week",
                                             "latitude", "longitude", "vehicles",
                                             "casualties"};
  return cols;
}

/// Parses the accident CSV. Columns outside the common attribute set are
/// ignored; rows that fail validation are skipped and counted.
inline IngestResult ingest_accidents(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw DataError("accident csv: empty file (no header)");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[detail::trim(header[i])] = i;
  for (const auto& name : accident_columns()) {
    if (!col.count(name)) throw DataError("accident csv: missing column '" + name + "'");
  }

  IngestResult out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    auto field = [&](const char* name) -> std::string {
      const auto i = col.at(name);
      return i < f.size() ? f[i] : std::string();
    };
    auto skip = [&](const std::string& why) {
      ++out.skipped;
      out.warnings.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    AccidentRecord r;
    r.id = detail::trim(field("id"));
    const auto lat = detail::parse_decimal(field("latitude"));
    const auto lon = detail::parse_decimal(field("longitude"));
    if (!lat || *lat < -90.0 || *lat > 90.0) { skip("bad latitude"); continue; }
    if (!lon || *lon < -180.0 || *lon > 180.0) { skip("bad longitude"); continue; }
    const auto date = detail::parse_date(field("date"));
    if (!date) { skip("bad date"); continue; }
    const auto time = detail::parse_time(field("time"));
    if (!time) { skip("bad time"); continue; }
    const auto dow = detail::parse_count(field("day_of_week"));
    if (!dow || *dow < 1 || *dow > 7) { skip("bad day_of_week"); continue; }
    const auto veh = detail::parse_count(field("vehicles"));
    const auto cas = detail::parse_count(field("casualties"));
    if (!veh || !cas) { skip("bad vehicle/casualty count"); continue; }
    r.latitude = *lat;
    r.longitude = *lon;
    r.date = *date;
    r.seconds_of_day = *time;
    r.day_of_week = *dow;
    r.vehicles = *veh;
    r.casualties = *cas;
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) throw DataError("accident csv: no records");
  return out;
}

inline constexpr double kEarthRadiusM = 6371000.0;

/// Study-area grid on a local equirectangular projection about the
/// bounding-box centroid (ref_lat, ref_lon). Cells are half-open squares;
/// row 0 is the southernmost row.
struct GridSpec {
  double ref_lat = 0.0;
  double ref_lon = 0.0;
  double earth_radius_m = kEarthRadiusM;
  double cell_size_m = 30.0;
  double x_min = 0.0;  // projected south-west corner, meters
  double y_min = 0.0;
  std::size_t columns = 1;
  std::size_t rows = 1;

  double meters_per_degree_lat() const { return earth_radius_m * std::numbers::pi / 180.0; }
  double meters_per_degree_lon() const {
    return meters_per_degree_lat() * std::cos(ref_lat * std::numbers::pi / 180.0);
  }
  double project_x(double lon) const { return (lon - ref_lon) * meters_per_degree_lon(); }
  double project_y(double lat) const { return (lat - ref_lat) * meters_per_degree_lat(); }

  /// Grid origin (south-west corner) in degrees.
  double origin_lat() const { return ref_lat + y_min / meters_per_degree_lat(); }
  double origin_lon() const { return ref_lon + x_min / meters_per_degree_lon(); }

  std::size_t cell_count() const { return columns * rows; }

  /// (col,row) of a projected point by the floor rule.
  std::pair<std::size_t, std::size_t> cell_of_projected(double x, double y) const {
    const double cx = std::floor((x - x_min) / cell_size_m);
    const double cy = std::floor((y - y_min) / cell_size_m);
    if (cx < 0 || cy < 0 || cx >= static_cast<double>(columns) ||
        cy >= static_cast<double>(rows)) {
      throw DataError("point outside grid");
    }
    return {static_cast<std::size_t>(cx), static_cast<std::size_t>(cy)};
  }

  std::pair<std::size_t, std::size_t> cell_of(double lat, double lon) const {
    return cell_of_projected(project_x(lon), project_y(lat));
  }

  double center_lat(std::size_t row) const {
    return ref_lat + (y_min + (static_cast<double>(row) + 0.5) * cell_size_m) / meters_per_degree_lat();
  }
  double center_lon(std::size_t col) const {
    return ref_lon + (x_min + (static_cast<double>(col) + 0.5) * cell_size_m) / meters_per_degree_lon();
  }

  std::size_t linear_index(std::size_t col, std::size_t row) const { return row * columns + col; }
};

enum class SafetyLabel { safe = 0, dangerous = 1 };

struct Cell {
  std::size_t col = 0;
  std::size_t row = 0;
  double center_lat = 0.0;
  double center_lon = 0.0;
  std::uint64_t safety_score = 0;
  std::optional<SafetyLabel> label;
};

struct GridAssignment {
  GridSpec grid;
  std::vector<std::pair<std::size_t, std::size_t>> cell_of_record;
};

/// Imposes a cell_size_m grid over the records' bounding box.
inline GridAssignment build_grid(const std::vector<AccidentRecord>& records,
                                 double cell_size_m) {
  if (records.empty()) throw DataError("build_grid: no records");
  if (!(cell_size_m > 0.0)) throw ConfigError("build_grid: cell size must be positive");
  double lat_lo = 90, lat_hi = -90, lon_lo = 180, lon_hi = -180;
  for (const auto& r : records) {
    lat_lo = std::min(lat_lo, r.latitude);
    lat_hi = std::max(lat_hi, r.latitude);
    lon_lo = std::min(lon_lo, r.longitude);
    lon_hi = std::max(lon_hi, r.longitude);
  }
  GridAssignment out;
  auto& g = out.grid;
  g.cell_size_m = cell_size_m;
  g.ref_lat = 0.5 * (lat_lo + lat_hi);
  g.ref_lon = 0.5 * (lon_lo + lon_hi);
  double x_hi = -INFINITY, y_hi = -INFINITY;
  g.x_min = INFINITY;
  g.y_min = INFINITY;
  std::vector<std::pair<double, double>> projected;
  projected.reserve(records.size());
  for (const auto& r : records) {
    const double x = g.project_x(r.longitude), y = g.project_y(r.latitude);
    projected.emplace_back(x, y);
    g.x_min = std::min(g.x_min, x);
    g.y_min = std::min(g.y_min, y);
    x_hi = std::max(x_hi, x);
    y_hi = std::max(y_hi, y);
  }
  g.columns = static_cast<std::size_t>(std::floor((x_hi - g.x_min) / cell_size_m)) + 1;
  g.rows = static_cast<std::size_t>(std::floor((y_hi - g.y_min) / cell_size_m)) + 1;
  out.cell_of_record.reserve(records.size());
  for (const auto& [x, y] : projected) out.cell_of_record.push_back(g.cell_of_projected(x, y));
  return out;
}

/// Every grid cell in row-major order with S_i = accidents mapped into it.
inline std::vector<Cell> score_cells(const GridAssignment& assignment) {
  const auto& g = assignment.grid;
  std::vector<Cell> cells(g.cell_count());
  for (std::size_t row = 0; row < g.rows; ++row)
    for (std::size_t col = 0; col < g.columns; ++col) {
      auto& c = cells[g.linear_index(col, row)];
      c.col = col;
      c.row = row;
      c.center_lat = g.center_lat(row);
      c.center_lon = g.center_lon(col);
    }
  for (const auto& [col, row] : assignment.cell_of_record) {
    cells.at(g.linear_index(col, row)).safety_score += 1;
  }
  return cells;
}

}  // namespace roadsafe
