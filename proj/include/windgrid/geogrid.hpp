#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "windgrid/error.hpp"

namespace windgrid::geogrid {

// Target lattice. lat_start is the northern edge (lat_end < lat_start),
// lon_start the western edge; cell_deg applies to both axes.
struct GridSpec {
  double lat_start = -32.0;
  double lat_end = -35.4;
  double lon_start = 115.0;
  double lon_end = 118.4;
  double cell_deg = 0.1;
};

struct CellIndex {
  int row = 0;  // 0 = northernmost
  int col = 0;  // 0 = westernmost
  bool operator==(const CellIndex&) const = default;
};

// Cell-centre geometry. Row 0 is north: centre latitude strictly decreases
// with row; centre longitude increases with column.
struct Grid {
  GridSpec spec;
  int n_lat = 0;
  int n_lon = 0;
  std::vector<double> lat_centers;  // descending
  std::vector<double> lon_centers;  // ascending

  double lat_center(int row) const { return lat_centers[static_cast<std::size_t>(row)]; }
  double lon_center(int col) const { return lon_centers[static_cast<std::size_t>(col)]; }
  bool contains(double lat, double lon) const;
};

struct GriddedField {
  int n_lat = 0;
  int n_lon = 0;
  std::vector<double> values;       // row-major (n_lat, n_lon); masked-invalid cells hold 0
  std::vector<std::uint8_t> valid;  // same shape
  std::string units;

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * n_lon + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * n_lon + c]; }
  static GriddedField zeros(int n_lat, int n_lon, std::string units = "");
};

// Frames at a strictly ascending, uniform time step.
struct TimeSeriesField {
  std::vector<std::int64_t> times;  // epoch seconds
  std::vector<GriddedField> frames;

  std::int64_t step_seconds() const;  // validates uniformity
};

struct DemPoint {
  double lat = 0;
  double lon = 0;
  double elevation_m = 0;
};

// Throws ConfigError naming the offending axis when an extent is not an
// integer multiple of cell_deg (within 1e-9 degrees).
Grid make_grid(const GridSpec& spec);

// Builds the centre lattice directly from centre coordinate sets (used for
// coarse fields parsed from CSV). Requires uniform spacing.
Grid grid_from_centers(std::vector<double> lat_centers_desc, std::vector<double> lon_centers_asc);

// Nearest cell centre by Euclidean distance in raw degrees; ties break to the
// smaller row, then smaller column. Throws OutOfDomainError (with the
// coordinates) outside the inclusive bounding box.
CellIndex bin_point(double lat, double lon, const Grid& grid);

// Each cell takes the elevation of the DEM point nearest its centre.
GriddedField bin_terrain(const std::vector<DemPoint>& dem_points, const Grid& grid);

// Bilinear interpolation from coarse cell centres onto the target centres.
// Queries outside the coarse centre hull are clamped onto it, so the coarse
// fetch needs at least one coarse cell of margin beyond the target bounds.
GriddedField interp_bilinear(const GriddedField& coarse, const Grid& coarse_grid,
                             const Grid& target);

// Per-cell linear interpolation in time. out_step_seconds must divide the
// input step; input timestamps are reproduced exactly.
TimeSeriesField resample_time_linear(const TimeSeriesField& series, std::int64_t out_step_seconds);

}  // namespace windgrid::geogrid
