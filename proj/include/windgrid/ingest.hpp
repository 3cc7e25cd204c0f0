#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "windgrid/geogrid.hpp"

namespace windgrid::ingest {

struct StationMeta {
  std::string station_id;
  double lat = 0;
  double lon = 0;
  bool has_10m_labels = false;
};

// One station report at a 15-minute tick. Missing fields stay missing until
// cube assembly, where the zero-fill rule applies.
struct ObservationRecord {
  std::string station_id;
  std::int64_t timestamp = 0;
  std::optional<double> temp_c;
  std::optional<double> humidity_pct;
  std::optional<double> wind3_speed;  // km/h
  std::optional<double> wind3_dir;    // deg meteorological, [0, 360)
  std::optional<double> wind10_speed;
  std::optional<double> wind10_dir;
};

struct CorrectionRule {
  std::string station_id;
  std::string field;  // "wind3_dir" or "wind10_dir"; empty for drop rules
  double rotation_deg = 0;
  bool drop_labels = false;
  std::int64_t active_from = 0;
  std::int64_t active_to = 0;  // exclusive
};

struct TimeFeatures {
  double sin_month = 0, cos_month = 1;
  double sin_hour = 0, cos_hour = 1;
  double sin_doy = 0, cos_doy = 1;
};

struct UV {
  double u = 0;  // km/h eastward
  double v = 0;  // km/h northward
};

struct SpeedDir {
  double speed = 0;
  double dir = 0;  // [0, 360), 0 when calm
};

struct ParseReport {
  struct Reject {
    std::size_t line_no = 0;
    std::string reason;
  };
  std::vector<Reject> rejects;
  std::vector<std::string> warnings;

  void warn(std::string msg) { warnings.push_back(std::move(msg)); }
  void reject(std::size_t line, std::string reason) { rejects.push_back({line, std::move(reason)}); }
};

// Meteorological FROM-convention: dir is the bearing the wind blows from,
// u is eastward, v northward. Throws on negative speed.
UV wind_to_uv(double speed_kmh, double dir_deg);
SpeedDir uv_to_wind(double u, double v);

TimeFeatures time_features(std::int64_t timestamp);

// Rotation rules add rotation_deg (mod 360) to the named direction field
// inside [active_from, active_to); drop rules null out the 10 m fields there.
// Rules naming unknown stations are skipped with a warning.
void apply_corrections(std::vector<ObservationRecord>& records,
                       const std::vector<CorrectionRule>& rules,
                       const std::vector<StationMeta>& catalog, ParseReport& report);

std::vector<StationMeta> parse_catalog(const std::string& path, ParseReport& report);
std::vector<ObservationRecord> parse_observations(const std::string& path, ParseReport& report);
std::vector<CorrectionRule> parse_corrections(const std::string& path, ParseReport& report);
std::vector<geogrid::DemPoint> parse_dem(const std::string& path, ParseReport& report);

struct CoarseSeries {
  std::string var;
  geogrid::Grid grid;
  geogrid::TimeSeriesField series;
};

// CSV schema: timestamp,lat,lon,<var> — one variable per file, hourly frames
// on a regular grid. Gaps or incomplete frames are errors.
CoarseSeries parse_coarse(const std::string& path, ParseReport& report);

}  // namespace windgrid::ingest
