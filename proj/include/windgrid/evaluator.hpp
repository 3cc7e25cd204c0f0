#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "windgrid/error.hpp"
#include "windgrid/geogrid.hpp"

namespace windgrid::evaluator {

// Season and day-part windows. The paper's clock windows are local times at a
// fixed UTC offset, half-open [start, end); months outside both seasons form
// an explicit third stratum (autumn months use the winter window, October the
// summer one) so the season x day-part cells partition every point.
struct StrataConfig {
  int utc_offset_minutes = 8 * 60;
  std::set<int> winter_months{6, 7, 8, 9};
  std::set<int> summer_months{11, 12, 1, 2};
  int summer_day_start_min = 5 * 60;            // 05:00
  int summer_day_end_min = 19 * 60 + 30;        // 19:30
  int winter_day_start_min = 7 * 60 + 15;       // 07:15
  int winter_day_end_min = 17 * 60 + 30;        // 17:30

  void validate() const;
};

enum class Season { Winter, Summer, Other };
enum class DayPart { Day, Night };

const char* season_name(Season s);
const char* daypart_name(DayPart d);

Season season_of(std::int64_t t, const StrataConfig& cfg);
DayPart daypart_of(std::int64_t t, const StrataConfig& cfg);

double mae(const std::vector<double>& y, const std::vector<double>& yhat);
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);

// Eq.-style population correlation; throws on constant input.
double correlation(const std::vector<double>& x, const std::vector<double>& y);

struct DerivedQuantities {
  double speed = 0;
  double sin_dir = 0;
  double cos_dir = 0;
  bool dir_valid = false;  // false for calm winds
};

// speed = |(u,v)|; sin/cos follow the ingest FROM-convention
// (sin = -u/speed, cos = -v/speed); calm pairs are flagged invalid.
DerivedQuantities derived_quantities(double u, double v);

// One evaluated prediction point at a labelled station.
struct EvalPoint {
  std::string station;
  std::int64_t time = 0;
  int horizon_min = 0;  // positive; 15-minute multiples
  double y_u = 0, y_v = 0;
  double p_u = 0, p_v = 0;
};

struct MetricRow {
  std::string quantity;  // u, v, speed, sin, cos
  std::string metric;    // MAE, RMSE, r
  std::string season;    // all, winter, summer, other
  std::string daypart;   // all, day, night
  int horizon_min = 0;   // 0 = all horizons
  std::string station;   // "all" or a station id
  std::string source;    // model, ecmwf, ...
  double value = 0;
  std::int64_t count = 0;
};

// Buckets every point by season, day-part, 15-minute horizon bin and station
// (each with an "all" aggregate) and emits MAE/RMSE/r rows per quantity.
// Degenerate buckets (empty, or constant series for r) are omitted.
std::vector<MetricRow> stratified_report(
    const std::map<std::string, std::vector<EvalPoint>>& points_by_source,
    const StrataConfig& cfg);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

// Predicted 10 m components at some station's cell, paired by time with the
// station's observed 3 m components by the correlation-map protocol.
struct StationPrediction {
  std::string station;
  std::int64_t time = 0;
  int horizon_min = 0;
  double p_u = 0, p_v = 0;
};

struct Obs3m {
  double u3 = 0, v3 = 0;
};

struct CorrMapRow {
  std::string station_id;
  double lat = 0, lon = 0;
  int horizon_min = 0;
  std::optional<double> r_u, r_v;  // absent when skipped
  std::int64_t count = 0;
};

std::vector<CorrMapRow> correlation_map(
    const std::vector<StationPrediction>& preds,
    const std::map<std::string, std::map<std::int64_t, Obs3m>>& obs3,
    const std::map<std::string, std::pair<double, double>>& station_coords,
    const std::vector<int>& horizons_min, std::int64_t min_points = 100);

void write_corrmap_csv(const std::vector<CorrMapRow>& rows, const std::string& path);

// Plot-ready area forecast: one row per cell plus a companion table of the
// labelled-station truths at the same instant.
struct StationTruth {
  std::string station_id;
  double lat = 0, lon = 0;
  double u = 0, v = 0;
};

void export_area_forecast(const float* frame_uv,  // (2, n_lat, n_lon)
                          const geogrid::Grid& grid, const std::vector<StationTruth>& truths,
                          const std::string& cells_path, const std::string& stations_path);

}  // namespace windgrid::evaluator
