#include "windgrid/geogrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "windgrid/error.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::geogrid {

namespace {

int axis_cells(double extent, double cell_deg, const char* axis) {
  if (cell_deg <= 0) throw ConfigError("cell_deg must be positive");
  if (extent <= 0) throw ConfigError(std::string("grid extent not positive on ") + axis);
  const double n_real = extent / cell_deg;
  const double n_round = std::round(n_real);
  if (n_round < 1 || std::abs(extent - n_round * cell_deg) > 1e-9)
    throw ConfigError(std::string("grid extent on ") + axis +
                      " is not an integer multiple of cell_deg");
  return static_cast<int>(n_round);
}

// Index of the nearest value in a uniformly ordered centre array, scanning so
// that exact ties keep the smaller index.
int nearest_center(const std::vector<double>& centers, double q) {
  int best = 0;
  double best_d = std::abs(q - centers[0]);
  for (std::size_t i = 1; i < centers.size(); ++i) {
    const double d = std::abs(q - centers[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

bool Grid::contains(double lat, double lon) const {
  return lat <= spec.lat_start && lat >= spec.lat_end && lon >= spec.lon_start &&
         lon <= spec.lon_end;
}

GriddedField GriddedField::zeros(int n_lat, int n_lon, std::string units) {
  GriddedField f;
  f.n_lat = n_lat;
  f.n_lon = n_lon;
  f.values.assign(static_cast<std::size_t>(n_lat) * n_lon, 0.0);
  f.valid.assign(static_cast<std::size_t>(n_lat) * n_lon, 0);
  f.units = std::move(units);
  return f;
}

std::int64_t TimeSeriesField::step_seconds() const {
  if (times.size() < 2) throw InputError("time series needs at least 2 frames");
  const std::int64_t step = times[1] - times[0];
  if (step <= 0) throw InputError("time series timestamps not strictly ascending");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] - times[i - 1] != step)
      throw InputError("time series step not uniform between " +
                       timeutil::format_iso8601(times[i - 1]) + " and " +
                       timeutil::format_iso8601(times[i]));
  }
  if (frames.size() != times.size()) throw InputError("time series frame/time count mismatch");
  return step;
}

Grid make_grid(const GridSpec& spec) {
  Grid g;
  g.spec = spec;
  g.n_lat = axis_cells(spec.lat_start - spec.lat_end, spec.cell_deg, "latitude");
  g.n_lon = axis_cells(spec.lon_end - spec.lon_start, spec.cell_deg, "longitude");
  g.lat_centers.resize(static_cast<std::size_t>(g.n_lat));
  g.lon_centers.resize(static_cast<std::size_t>(g.n_lon));
  for (int r = 0; r < g.n_lat; ++r) g.lat_centers[static_cast<std::size_t>(r)] = spec.lat_start - (r + 0.5) * spec.cell_deg;
  for (int c = 0; c < g.n_lon; ++c) g.lon_centers[static_cast<std::size_t>(c)] = spec.lon_start + (c + 0.5) * spec.cell_deg;
  return g;
}

Grid grid_from_centers(std::vector<double> lat_centers_desc, std::vector<double> lon_centers_asc) {
  if (lat_centers_desc.empty() || lon_centers_asc.empty())
    throw ConfigError("grid_from_centers: empty centre set");
  auto uniform_step = [](const std::vector<double>& v, bool descending, const char* axis) {
    if (v.size() == 1) return 1.0;  // nominal; spacing unused for single line
    const double step = descending ? v[0] - v[1] : v[1] - v[0];
    if (step <= 0) throw ConfigError(std::string("centres not ordered on ") + axis);
    for (std::size_t i = 1; i < v.size(); ++i) {
      const double d = descending ? v[i - 1] - v[i] : v[i] - v[i - 1];
      if (std::abs(d - step) > 1e-9)
        throw ConfigError(std::string("centre spacing not uniform on ") + axis);
    }
    return step;
  };
  const double dlat = uniform_step(lat_centers_desc, true, "latitude");
  const double dlon = uniform_step(lon_centers_asc, false, "longitude");
  Grid g;
  g.n_lat = static_cast<int>(lat_centers_desc.size());
  g.n_lon = static_cast<int>(lon_centers_asc.size());
  g.spec.cell_deg = dlat;  // nominal; lat/lon spacing may differ only for 1-line grids
  g.spec.lat_start = lat_centers_desc.front() + dlat / 2;
  g.spec.lat_end = lat_centers_desc.back() - dlat / 2;
  g.spec.lon_start = lon_centers_asc.front() - dlon / 2;
  g.spec.lon_end = lon_centers_asc.back() + dlon / 2;
  g.lat_centers = std::move(lat_centers_desc);
  g.lon_centers = std::move(lon_centers_asc);
  return g;
}

CellIndex bin_point(double lat, double lon, const Grid& grid) {
  if (!grid.contains(lat, lon))
    throw OutOfDomainError("point (" + std::to_string(lat) + ", " + std::to_string(lon) +
                           ") outside grid bounds");
  // Euclidean distance in degrees separates by axis, and the per-axis
  // first-minimum scan realizes the (smaller row, then smaller col) tie rule.
  CellIndex idx;
  idx.row = nearest_center(grid.lat_centers, lat);
  idx.col = nearest_center(grid.lon_centers, lon);
  return idx;
}

GriddedField bin_terrain(const std::vector<DemPoint>& dem_points, const Grid& grid) {
  if (dem_points.empty()) throw InputError("bin_terrain: empty DEM point list");
  GriddedField out = GriddedField::zeros(grid.n_lat, grid.n_lon, "m");
  for (int r = 0; r < grid.n_lat; ++r) {
    const double clat = grid.lat_center(r);
    for (int c = 0; c < grid.n_lon; ++c) {
      const double clon = grid.lon_center(c);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < dem_points.size(); ++i) {
        const double dlat = dem_points[i].lat - clat;
        const double dlon = dem_points[i].lon - clon;
        const double d = dlat * dlat + dlon * dlon;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      out.at(r, c) = dem_points[best].elevation_m;
      out.valid[static_cast<std::size_t>(r) * grid.n_lon + c] = 1;
    }
  }
  return out;
}

GriddedField interp_bilinear(const GriddedField& coarse, const Grid& coarse_grid,
                             const Grid& target) {
  if (coarse_grid.n_lat < 2 || coarse_grid.n_lon < 2)
    throw ConfigError("interp_bilinear: coarse grid must be at least 2x2");
  if (coarse.n_lat != coarse_grid.n_lat || coarse.n_lon != coarse_grid.n_lon)
    throw ShapeError("interp_bilinear: field shape does not match coarse grid");

  const auto& clat = coarse_grid.lat_centers;  // descending
  const auto& clon = coarse_grid.lon_centers;  // ascending

  auto bracket = [](const std::vector<double>& centers, bool descending, double q, int& i0,
                    double& frac) {
    // clamp onto the centre hull, then locate the bracketing pair
    const double lo = descending ? centers.back() : centers.front();
    const double hi = descending ? centers.front() : centers.back();
    q = std::min(std::max(q, lo), hi);
    const double step = descending ? centers[0] - centers[1] : centers[1] - centers[0];
    const double offset = descending ? (centers[0] - q) : (q - centers[0]);
    int i = static_cast<int>(std::floor(offset / step));
    i = std::min(std::max(i, 0), static_cast<int>(centers.size()) - 2);
    const double c0 = centers[static_cast<std::size_t>(i)];
    double f = descending ? (c0 - q) / step : (q - c0) / step;
    f = std::min(std::max(f, 0.0), 1.0);
    i0 = i;
    frac = f;
  };

  GriddedField out = GriddedField::zeros(target.n_lat, target.n_lon, coarse.units);
  for (int r = 0; r < target.n_lat; ++r) {
    int r0;
    double fr;
    bracket(clat, true, target.lat_center(r), r0, fr);
    for (int c = 0; c < target.n_lon; ++c) {
      int c0;
      double fc;
      bracket(clon, false, target.lon_center(c), c0, fc);
      const double v00 = coarse.at(r0, c0);
      const double v01 = coarse.at(r0, c0 + 1);
      const double v10 = coarse.at(r0 + 1, c0);
      const double v11 = coarse.at(r0 + 1, c0 + 1);
      out.at(r, c) = (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
      out.valid[static_cast<std::size_t>(r) * target.n_lon + c] = 1;
    }
  }
  return out;
}

TimeSeriesField resample_time_linear(const TimeSeriesField& series,
                                     std::int64_t out_step_seconds) {
  if (series.frames.size() < 2) throw InputError("resample_time_linear: need at least 2 frames");
  const std::int64_t in_step = series.step_seconds();
  if (out_step_seconds <= 0 || in_step % out_step_seconds != 0)
    throw InputError("resample_time_linear: output step must divide the input step");

  const std::int64_t t0 = series.times.front();
  const std::int64_t t_end = series.times.back();
  TimeSeriesField out;
  for (std::int64_t t = t0; t <= t_end; t += out_step_seconds) out.times.push_back(t);
  out.frames.reserve(out.times.size());

  const int n_lat = series.frames[0].n_lat;
  const int n_lon = series.frames[0].n_lon;
  for (std::int64_t t : out.times) {
    const std::int64_t off = t - t0;
    const std::size_t i = static_cast<std::size_t>(off / in_step);
    const std::int64_t rem = off % in_step;
    if (rem == 0) {
      out.frames.push_back(series.frames[i]);  // input timestamps reproduced exactly
      continue;
    }
    const double w = static_cast<double>(rem) / static_cast<double>(in_step);
    const GriddedField& a = series.frames[i];
    const GriddedField& b = series.frames[i + 1];
    GriddedField f = GriddedField::zeros(n_lat, n_lon, a.units);
    for (std::size_t k = 0; k < f.values.size(); ++k) {
      f.values[k] = (1.0 - w) * a.values[k] + w * b.values[k];
      f.valid[k] = a.valid[k] && b.valid[k];
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace windgrid::geogrid
