#include "windgrid/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/ingest.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::synthgen {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// full-precision formatting so the bundle round-trips through text exactly
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ScenarioConfig::validate() const {
  if (n_stations < 1 || n_label_stations < 1 || n_label_stations > n_stations)
    throw ConfigError("synth: need 1 <= n_label_stations <= n_stations");
  if (days < 1) throw ConfigError("synth: days must be positive");
  if (field.amplitude <= 0 || field.wavelength_deg <= 0 || field.diurnal_period_h <= 0)
    throw ConfigError("synth: field parameters must be positive");
  if (noise_sd < 0) throw ConfigError("synth: noise_sd must be non-negative");
  if (coarse_cell_deg <= 0 || coarse_margin_cells < 1)
    throw ConfigError("synth: coarse grid parameters must be positive");
  if (start_time % 900 != 0) throw ConfigError("synth: start_time must be on a 15-minute tick");
}

double TruthOracle::u3(double lat, double lon, std::int64_t t) const {
  (void)lat;
  const double th = static_cast<double>(t) / 3600.0;
  return field.amplitude *
         std::sin(kTwoPi * lon / field.wavelength_deg + kTwoPi * th / field.diurnal_period_h);
}

double TruthOracle::v3(double lat, double lon, std::int64_t t) const {
  (void)lon;
  const double th = static_cast<double>(t) / 3600.0;
  return field.amplitude *
         std::cos(kTwoPi * lat / field.wavelength_deg + kTwoPi * th / field.diurnal_period_h);
}

double TruthOracle::temperature(double lat, double lon, std::int64_t t) const {
  const double th = static_cast<double>(t) / 3600.0;
  return 18.0 + 8.0 * std::sin(kTwoPi * th / field.diurnal_period_h) +
         1.5 * std::sin(kTwoPi * lat / field.wavelength_deg) +
         0.5 * std::cos(kTwoPi * lon / field.wavelength_deg);
}

double TruthOracle::humidity(double lat, double lon, std::int64_t t) const {
  const double th = static_cast<double>(t) / 3600.0;
  return 55.0 + 25.0 * std::cos(kTwoPi * th / field.diurnal_period_h +
                                kTwoPi * lon / field.wavelength_deg) +
         5.0 * std::sin(kTwoPi * lat / field.wavelength_deg);
}

double TruthOracle::msl(double lat, double lon, std::int64_t t) const {
  const double th = static_cast<double>(t) / 3600.0;
  return 1013.0 + 6.0 * std::sin(kTwoPi * lon / field.wavelength_deg) *
                      std::cos(kTwoPi * th / field.diurnal_period_h) +
         2.0 * std::sin(kTwoPi * lat / field.wavelength_deg);
}

double TruthOracle::dem(double lat, double lon) const {
  return 150.0 + field.dem_relief_m * std::sin(kTwoPi * lat / field.wavelength_deg) *
                     std::cos(kTwoPi * lon / field.wavelength_deg);
}

TruthOracle oracle_of(const ScenarioConfig& cfg) { return TruthOracle{cfg.field, cfg.alpha}; }

ScenarioFiles generate(const ScenarioConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const geogrid::Grid grid = geogrid::make_grid(cfg.grid);
  const TruthOracle oracle = oracle_of(cfg);
  const int ticks = cfg.days * 96;
  const std::int64_t step = 900;

  ScenarioFiles files;
  files.stations = out_dir + "/stations.csv";
  files.observations = out_dir + "/observations.csv";
  files.coarse_u10f = out_dir + "/coarse_u10f.csv";
  files.coarse_v10f = out_dir + "/coarse_v10f.csv";
  files.coarse_msl = out_dir + "/coarse_msl.csv";
  files.dem = out_dir + "/dem.csv";
  files.truth = out_dir + "/truth.csv";

  // stations: uniform placement, one per cell so nobody gets shadowed
  struct Station {
    std::string id;
    double lat, lon;
    geogrid::CellIndex cell;
    bool labelled;
  };
  std::vector<Station> stations;
  {
    Rng rng(Rng::mix(cfg.seed, 101));
    std::set<std::pair<int, int>> used;
    const std::int64_t max_attempts = 1000LL * cfg.n_stations;
    std::int64_t attempts = 0;
    while (static_cast<int>(stations.size()) < cfg.n_stations) {
      if (++attempts > max_attempts)
        throw ConfigError("synth: cannot place " + std::to_string(cfg.n_stations) +
                          " stations in distinct cells of a " + std::to_string(grid.n_lat) + "x" +
                          std::to_string(grid.n_lon) + " grid");
      const double lat = rng.uniform(cfg.grid.lat_end, cfg.grid.lat_start);
      const double lon = rng.uniform(cfg.grid.lon_start, cfg.grid.lon_end);
      const geogrid::CellIndex cell = geogrid::bin_point(lat, lon, grid);
      if (!used.insert({cell.row, cell.col}).second) continue;
      Station s;
      s.id = "SYN" + std::string(stations.size() < 9 ? "0" : "") + std::to_string(stations.size() + 1);
      s.lat = lat;
      s.lon = lon;
      s.cell = cell;
      s.labelled = static_cast<int>(stations.size()) < cfg.n_label_stations;
      stations.push_back(s);
    }
  }
  {
    csvio::Writer out(files.stations, {"station_id", "lat", "lon", "has_10m"});
    for (const auto& s : stations)
      out.row({s.id, fmt17(s.lat), fmt17(s.lon), s.labelled ? "1" : "0"});
    out.close();
  }

  // observations at the stations' cell centres
  {
    csvio::Writer out(files.observations,
                      {"station_id", "timestamp", "temp_c", "humidity_pct", "wind3_speed_kmh",
                       "wind3_dir_deg", "wind10_speed_kmh", "wind10_dir_deg"});
    for (int k = 0; k < ticks; ++k) {
      const std::int64_t t = cfg.start_time + static_cast<std::int64_t>(k) * step;
      const std::string ts = timeutil::format_iso8601(t);
      for (std::size_t si = 0; si < stations.size(); ++si) {
        const auto& s = stations[si];
        const double lat = grid.lat_center(s.cell.row);
        const double lon = grid.lon_center(s.cell.col);
        const ingest::SpeedDir w3 =
            ingest::uv_to_wind(oracle.u3(lat, lon, t), oracle.v3(lat, lon, t));
        std::vector<std::string> row{s.id,
                                     ts,
                                     fmt17(oracle.temperature(lat, lon, t)),
                                     fmt17(oracle.humidity(lat, lon, t)),
                                     fmt17(w3.speed),
                                     fmt17(w3.dir),
                                     "",
                                     ""};
        if (s.labelled) {
          double u10 = oracle.u10(lat, lon, t);
          double v10 = oracle.v10(lat, lon, t);
          if (cfg.noise_sd > 0) {
            Rng noise(Rng::mix(cfg.seed, Rng::mix(static_cast<std::uint64_t>(si) + 1,
                                                  static_cast<std::uint64_t>(k))));
            u10 += cfg.noise_sd * noise.normal();
            v10 += cfg.noise_sd * noise.normal();
          }
          const ingest::SpeedDir w10 = ingest::uv_to_wind(u10, v10);
          row[6] = fmt17(w10.speed);
          row[7] = fmt17(w10.dir);
        }
        out.row(row);
      }
    }
    out.close();
  }

  // hourly coarse fields with a clamp margin beyond the target bounds
  {
    const double margin = cfg.coarse_margin_cells * cfg.coarse_cell_deg;
    std::vector<double> clats, clons;
    for (double lat = cfg.grid.lat_start + margin; lat >= cfg.grid.lat_end - margin - 1e-12;
         lat -= cfg.coarse_cell_deg)
      clats.push_back(lat);
    for (double lon = cfg.grid.lon_start - margin; lon <= cfg.grid.lon_end + margin + 1e-12;
         lon += cfg.coarse_cell_deg)
      clons.push_back(lon);

    auto emit = [&](const std::string& path, const std::string& var, auto&& f) {
      csvio::Writer out(path, {"timestamp", "lat", "lon", var});
      for (int hour = 0; hour <= cfg.days * 24; ++hour) {
        const std::int64_t t = cfg.start_time + static_cast<std::int64_t>(hour) * 3600;
        const std::string ts = timeutil::format_iso8601(t);
        for (double lat : clats)
          for (double lon : clons) out.row({ts, fmt17(lat), fmt17(lon), fmt17(f(lat, lon, t))});
      }
      out.close();
    };
    emit(files.coarse_u10f, "u10f",
         [&](double lat, double lon, std::int64_t t) { return oracle.u10(lat, lon, t); });
    emit(files.coarse_v10f, "v10f",
         [&](double lat, double lon, std::int64_t t) { return oracle.v10(lat, lon, t); });
    emit(files.coarse_msl, "msl",
         [&](double lat, double lon, std::int64_t t) { return oracle.msl(lat, lon, t); });
  }

  // DEM points exactly at the cell centres
  {
    csvio::Writer out(files.dem, {"lat", "lon", "elevation_m"});
    for (int r = 0; r < grid.n_lat; ++r)
      for (int c = 0; c < grid.n_lon; ++c)
        out.row({fmt17(grid.lat_center(r)), fmt17(grid.lon_center(c)),
                 fmt17(oracle.dem(grid.lat_center(r), grid.lon_center(c)))});
    out.close();
  }

  // analytic truth at every cell centre and tick
  {
    csvio::Writer out(files.truth, {"timestamp", "lat", "lon", "u10", "v10"});
    for (int k = 0; k < ticks; ++k) {
      const std::int64_t t = cfg.start_time + static_cast<std::int64_t>(k) * step;
      const std::string ts = timeutil::format_iso8601(t);
      for (int r = 0; r < grid.n_lat; ++r)
        for (int c = 0; c < grid.n_lon; ++c) {
          const double lat = grid.lat_center(r);
          const double lon = grid.lon_center(c);
          out.row({ts, fmt17(lat), fmt17(lon), fmt17(oracle.u10(lat, lon, t)),
                   fmt17(oracle.v10(lat, lon, t))});
        }
    }
    out.close();
  }
  return files;
}

TruthTable load_truth(const std::string& path) {
  csvio::Reader in(path);
  const int c_ts = in.require_column("timestamp");
  const int c_lat = in.require_column("lat");
  const int c_lon = in.require_column("lon");
  const int c_u = in.require_column("u10");
  const int c_v = in.require_column("v10");

  std::set<double> lat_set, lon_set;
  struct Rec {
    std::int64_t t;
    double lat, lon, u, v;
  };
  std::vector<Rec> recs;
  csvio::Row row;
  while (in.next(row)) {
    Rec r;
    r.t = timeutil::parse_iso8601(row.fields.at(static_cast<std::size_t>(c_ts)));
    r.lat = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lat)));
    r.lon = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_lon)));
    r.u = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_u)));
    r.v = csvio::parse_double(row.fields.at(static_cast<std::size_t>(c_v)));
    recs.push_back(r);
    lat_set.insert(r.lat);
    lon_set.insert(r.lon);
  }
  if (recs.empty()) throw InputError("'" + path + "': empty truth table");

  TruthTable table;
  table.lat_centers.assign(lat_set.rbegin(), lat_set.rend());
  table.lon_centers.assign(lon_set.begin(), lon_set.end());
  table.n_lat = static_cast<int>(table.lat_centers.size());
  table.n_lon = static_cast<int>(table.lon_centers.size());

  auto index_of = [](const std::vector<double>& v, double q) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] == q) return static_cast<int>(i);
    throw InputError("truth table centre lookup failed");
  };
  const std::size_t plane = static_cast<std::size_t>(table.n_lat) * table.n_lon;
  for (const Rec& r : recs) {
    auto& frame = table.frames[r.t];
    if (frame.empty()) frame.assign(2 * plane, 0.0);
    const std::size_t k = static_cast<std::size_t>(index_of(table.lat_centers, r.lat)) * table.n_lon +
                          static_cast<std::size_t>(index_of(table.lon_centers, r.lon));
    frame[k] = r.u;
    frame[plane + k] = r.v;
  }
  return table;
}

void OracleEval::add_frame(std::int64_t time, const float* uv, int n_lat, int n_lon) {
  if (n_lat != truth_.n_lat || n_lon != truth_.n_lon)
    throw ShapeError("oracle_eval: prediction grid " + std::to_string(n_lat) + "x" +
                     std::to_string(n_lon) + " does not match truth " +
                     std::to_string(truth_.n_lat) + "x" + std::to_string(truth_.n_lon));
  auto it = truth_.frames.find(time);
  if (it == truth_.frames.end())
    throw InputError("oracle_eval: truth has no frame at " + timeutil::format_iso8601(time));
  const std::size_t plane = static_cast<std::size_t>(n_lat) * n_lon;
  for (std::size_t k = 0; k < plane; ++k) {
    const double du = static_cast<double>(uv[k]) - it->second[k];
    const double dv = static_cast<double>(uv[plane + k]) - it->second[plane + k];
    abs_u_ += std::abs(du);
    abs_v_ += std::abs(dv);
    sq_u_ += du * du;
    sq_v_ += dv * dv;
    ++count_;
  }
}

OracleMetrics OracleEval::metrics() const {
  if (count_ == 0) throw InputError("oracle_eval: no frames evaluated");
  OracleMetrics m;
  m.count = count_;
  const double n = static_cast<double>(count_);
  m.mae_u = abs_u_ / n;
  m.mae_v = abs_v_ / n;
  m.rmse_u = std::sqrt(sq_u_ / n);
  m.rmse_v = std::sqrt(sq_v_ / n);
  return m;
}

}  // namespace windgrid::synthgen
