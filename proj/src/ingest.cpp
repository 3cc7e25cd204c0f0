#include "windgrid/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::ingest {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
}  // namespace

UV wind_to_uv(double speed_kmh, double dir_deg) {
  if (speed_kmh < 0) throw InputError("wind speed must be non-negative");
  const double rad = dir_deg * kDegToRad;
  return {-speed_kmh * std::sin(rad), -speed_kmh * std::cos(rad)};
}

SpeedDir uv_to_wind(double u, double v) {
  SpeedDir out;
  out.speed = std::sqrt(u * u + v * v);
  if (out.speed == 0) {
    out.dir = 0;  // calm convention
    return out;
  }
  double dir = std::atan2(-u, -v) / kDegToRad;
  if (dir < 0) dir += 360.0;
  if (dir >= 360.0) dir -= 360.0;
  out.dir = dir;
  return out;
}

TimeFeatures time_features(std::int64_t timestamp) {
  const timeutil::CivilDateTime c = timeutil::from_epoch(timestamp);
  const double phase_month = 2.0 * kPi * (c.month - 1) / 12.0;
  const double phase_hour =
      2.0 * kPi * (c.hour + c.minute / 60.0 + c.second / 3600.0) / 24.0;
  const int doy = timeutil::day_of_year(c.year, c.month, c.day);
  const double phase_doy = 2.0 * kPi * (doy - 1) / 365.25;
  TimeFeatures f;
  f.sin_month = std::sin(phase_month);
  f.cos_month = std::cos(phase_month);
  f.sin_hour = std::sin(phase_hour);
  f.cos_hour = std::cos(phase_hour);
  f.sin_doy = std::sin(phase_doy);
  f.cos_doy = std::cos(phase_doy);
  return f;
}

void apply_corrections(std::vector<ObservationRecord>& records,
                       const std::vector<CorrectionRule>& rules,
                       const std::vector<StationMeta>& catalog, ParseReport& report) {
  std::unordered_set<std::string> known;
  for (const auto& s : catalog) known.insert(s.station_id);

  std::vector<const CorrectionRule*> active;
  for (const auto& r : rules) {
    if (!known.count(r.station_id)) {
      report.warn("correction rule for unknown station '" + r.station_id + "' skipped");
      continue;
    }
    if (r.active_from >= r.active_to)
      throw ConfigError("correction rule for '" + r.station_id + "' has active_from >= active_to");
    if (!r.drop_labels && r.field != "wind3_dir" && r.field != "wind10_dir")
      throw ConfigError("correction rule field must be wind3_dir or wind10_dir, got '" + r.field +
                        "'");
    active.push_back(&r);
  }

  auto rotate = [](std::optional<double>& dir, double deg) {
    if (!dir) return;
    double d = std::fmod(*dir + deg, 360.0);
    if (d < 0) d += 360.0;
    dir = d;
  };

  for (auto& rec : records) {
    for (const CorrectionRule* r : active) {
      if (rec.station_id != r->station_id) continue;
      if (rec.timestamp < r->active_from || rec.timestamp >= r->active_to) continue;
      if (r->drop_labels) {
        rec.wind10_speed.reset();
        rec.wind10_dir.reset();
      } else if (r->field == "wind3_dir") {
        rotate(rec.wind3_dir, r->rotation_deg);
      } else {
        rotate(rec.wind10_dir, r->rotation_deg);
      }
    }
  }
}

std::vector<StationMeta> parse_catalog(const std::string& path, ParseReport& report) {
  csvio::Reader in(path);
  const int c_id = in.require_column("station_id");
  const int c_lat = in.require_column("lat");
  const int c_lon = in.require_column("lon");
  const int c_10m = in.require_column("has_10m");

  std::vector<StationMeta> out;
  std::unordered_set<std::string> seen;
  csvio::Row row;
  while (in.next(row)) {
    try {
      StationMeta s;
      s.station_id = row.fields.at(static_cast<std::size_t>(c_id));
      if (s.station_id.empty()) throw FormatError("empty station_id");
      if (!seen.insert(s.station_id).second)
        throw FormatError("duplicate station_id '" + s.station_id + "'");
      s.lat = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lat)));
      s.lon = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lon)));
      const std::int64_t flag = csvio::parse_int(row.fields.at(static_cast<std::size_t>(c_10m)));
      if (flag != 0 && flag != 1) throw FormatError("has_10m must be 0 or 1");
      s.has_10m_labels = flag == 1;
      out.push_back(std::move(s));
    } catch (const Error& e) {
      report.reject(row.line_no, e.what());
    }
  }
  return out;
}

namespace {

// Normalizes a direction into [0, 360); warns when it had to wrap.
std::optional<double> read_direction(const std::string& s, std::size_t line, ParseReport& report) {
  auto v = csvio::parse_optional_double(s);
  if (!v) return v;
  if (*v >= 0 && *v < 360.0) return v;
  double d = std::fmod(*v, 360.0);
  if (d < 0) d += 360.0;
  report.warn("line " + std::to_string(line) + ": direction " + csvio::fmt_double(*v) +
              " normalized to " + csvio::fmt_double(d));
  return d;
}

}  // namespace

std::vector<ObservationRecord> parse_observations(const std::string& path, ParseReport& report) {
  csvio::Reader in(path);
  const int c_id = in.require_column("station_id");
  const int c_ts = in.require_column("timestamp");
  const int c_t = in.require_column("temp_c");
  const int c_h = in.require_column("humidity_pct");
  const int c_ws3 = in.require_column("wind3_speed_kmh");
  const int c_wd3 = in.require_column("wind3_dir_deg");
  const int c_ws10 = in.column("wind10_speed_kmh");
  const int c_wd10 = in.column("wind10_dir_deg");

  auto field = [](const csvio::Row& row, int col) -> std::string {
    if (col < 0 || static_cast<std::size_t>(col) >= row.fields.size()) return "";
    return row.fields[static_cast<std::size_t>(col)];
  };

  std::vector<ObservationRecord> out;
  std::set<std::pair<std::string, std::int64_t>> seen;
  csvio::Row row;
  while (in.next(row)) {
    try {
      ObservationRecord r;
      r.station_id = field(row, c_id);
      if (r.station_id.empty()) throw FormatError("empty station_id");
      r.timestamp = timeutil::parse_iso8601(field(row, c_ts));
      if (r.timestamp % 900 != 0) throw FormatError("timestamp not aligned to 15-minute ticks");
      if (!seen.insert({r.station_id, r.timestamp}).second)
        throw FormatError("duplicate observation for station '" + r.station_id + "'");
      r.temp_c = csvio::parse_optional_double(field(row, c_t));
      r.humidity_pct = csvio::parse_optional_double(field(row, c_h));
      r.wind3_speed = csvio::parse_optional_double(field(row, c_ws3));
      if (r.wind3_speed && *r.wind3_speed < 0) throw FormatError("negative wind3 speed");
      r.wind3_dir = read_direction(field(row, c_wd3), row.line_no, report);
      r.wind10_speed = csvio::parse_optional_double(field(row, c_ws10));
      if (r.wind10_speed && *r.wind10_speed < 0) throw FormatError("negative wind10 speed");
      r.wind10_dir = read_direction(field(row, c_wd10), row.line_no, report);
      out.push_back(std::move(r));
    } catch (const Error& e) {
      report.reject(row.line_no, e.what());
    }
  }
  return out;
}

std::vector<CorrectionRule> parse_corrections(const std::string& path, ParseReport& report) {
  csvio::Reader in(path);
  const int c_id = in.require_column("station_id");
  const int c_field = in.require_column("field");
  const int c_rot = in.require_column("rotation_deg");
  const int c_drop = in.require_column("drop_labels");
  const int c_from = in.require_column("active_from");
  const int c_to = in.require_column("active_to");

  std::vector<CorrectionRule> out;
  csvio::Row row;
  while (in.next(row)) {
    try {
      CorrectionRule r;
      r.station_id = row.fields.at(static_cast<std::size_t>(c_id));
      r.field = row.fields.at(static_cast<std::size_t>(c_field));
      const auto rot = csvio::parse_optional_double(row.fields.at(static_cast<std::size_t>(c_rot)));
      r.rotation_deg = rot.value_or(0.0);
      r.drop_labels = csvio::parse_int(row.fields.at(static_cast<std::size_t>(c_drop))) != 0;
      r.active_from = timeutil::parse_iso8601(row.fields.at(static_cast<std::size_t>(c_from)));
      r.active_to = timeutil::parse_iso8601(row.fields.at(static_cast<std::size_t>(c_to)));
      if (r.active_from >= r.active_to) throw FormatError("active_from >= active_to");
      if (!r.drop_labels && r.field != "wind3_dir" && r.field != "wind10_dir")
        throw FormatError("field must be wind3_dir or wind10_dir for rotation rules");
      out.push_back(std::move(r));
    } catch (const Error& e) {
      report.reject(row.line_no, e.what());
    }
  }
  return out;
}

std::vector<geogrid::DemPoint> parse_dem(const std::string& path, ParseReport& report) {
  csvio::Reader in(path);
  const int c_lat = in.require_column("lat");
  const int c_lon = in.require_column("lon");
  const int c_elev = in.require_column("elevation_m");

  std::vector<geogrid::DemPoint> out;
  csvio::Row row;
  while (in.next(row)) {
    try {
      geogrid::DemPoint p;
      p.lat = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lat)));
      p.lon = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lon)));
      p.elevation_m = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_elev)));
      out.push_back(p);
    } catch (const Error& e) {
      report.reject(row.line_no, e.what());
    }
  }
  return out;
}

CoarseSeries parse_coarse(const std::string& path, ParseReport& report) {
  csvio::Reader in(path);
  const int c_ts = in.require_column("timestamp");
  const int c_lat = in.require_column("lat");
  const int c_lon = in.require_column("lon");
  if (in.header().size() != 4)
    throw FormatError("'" + path + "': coarse files carry exactly one variable column");
  int c_var = -1;
  std::string var;
  for (std::size_t i = 0; i < in.header().size(); ++i) {
    const int ii = static_cast<int>(i);
    if (ii != c_ts && ii != c_lat && ii != c_lon) {
      c_var = ii;
      var = in.header()[i];
    }
  }

  struct Sample {
    double lat, lon, value;
  };
  std::map<std::int64_t, std::vector<Sample>> by_time;
  std::set<double> lat_set, lon_set;
  csvio::Row row;
  while (in.next(row)) {
    try {
      const std::int64_t t = timeutil::parse_iso8601(row.fields.at(static_cast<std::size_t>(c_ts)));
      Sample s;
      s.lat = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lat)));
      s.lon = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lon)));
      s.value = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_var)));
      by_time[t].push_back(s);
      lat_set.insert(s.lat);
      lon_set.insert(s.lon);
    } catch (const Error& e) {
      report.reject(row.line_no, e.what());
    }
  }
  if (by_time.empty()) throw InputError("'" + path + "': no coarse samples parsed");

  std::vector<double> lats(lat_set.rbegin(), lat_set.rend());  // descending
  std::vector<double> lons(lon_set.begin(), lon_set.end());    // ascending
  CoarseSeries out;
  out.var = var;
  out.grid = geogrid::grid_from_centers(std::move(lats), std::move(lons));

  const std::size_t cells =
      static_cast<std::size_t>(out.grid.n_lat) * static_cast<std::size_t>(out.grid.n_lon);
  std::int64_t prev = 0;
  bool first = true;
  std::int64_t step = 0;
  for (const auto& [t, samples] : by_time) {
    if (!first) {
      const std::int64_t d = t - prev;
      if (step == 0) step = d;
      if (d != step)
        throw InputError("'" + path + "': time gap between " + timeutil::format_iso8601(prev) +
                         " and " + timeutil::format_iso8601(t));
    }
    if (samples.size() != cells)
      throw InputError("'" + path + "': frame at " + timeutil::format_iso8601(t) +
                       " has " + std::to_string(samples.size()) + " samples, expected " +
                       std::to_string(cells));
    geogrid::GriddedField f = geogrid::GriddedField::zeros(out.grid.n_lat, out.grid.n_lon, var);
    std::vector<std::uint8_t> filled(cells, 0);
    for (const Sample& s : samples) {
      const geogrid::CellIndex idx = geogrid::bin_point(s.lat, s.lon, out.grid);
      const std::size_t k =
          static_cast<std::size_t>(idx.row) * static_cast<std::size_t>(out.grid.n_lon) +
          static_cast<std::size_t>(idx.col);
      if (filled[k])
        throw InputError("'" + path + "': duplicate coarse sample at " +
                         timeutil::format_iso8601(t));
      filled[k] = 1;
      f.values[k] = s.value;
      f.valid[k] = 1;
    }
    out.series.times.push_back(t);
    out.series.frames.push_back(std::move(f));
    prev = t;
    first = false;
  }
  return out;
}

}  // namespace windgrid::ingest
