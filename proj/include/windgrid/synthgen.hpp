#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "windgrid/geogrid.hpp"
#include "windgrid/tensor.hpp"

namespace windgrid::synthgen {

// The default wavelength keeps the summed bilinear + temporal regrid error of
// the hourly 0.25-degree coarse sampling under 2% of the amplitude
// (each term ~ A (2 pi / scale)^2 step^2 / 8).
struct FieldSpec {
  double amplitude = 10.0;        // km/h
  double wavelength_deg = 8.0;    // spatial wavelength of the wind pattern
  double diurnal_period_h = 24.0;
  double dem_relief_m = 0.0;      // terrain is flat by default (decorative)
};

struct ScenarioConfig {
  geogrid::GridSpec grid{-31.0, -32.2, 116.0, 117.2, 0.1};  // 12 x 12 cells
  int n_stations = 5;
  int n_label_stations = 2;
  int days = 8;
  std::int64_t start_time = 1642896000;  // 2022-01-23T00:00:00Z
  std::uint64_t seed = 1;
  FieldSpec field;
  double alpha = 1.2;      // 10 m = alpha * 3 m coupling
  double noise_sd = 0.0;   // station-label noise
  double coarse_cell_deg = 0.25;
  int coarse_margin_cells = 2;

  void validate() const;
};

// Closed-form truth. Station observations are sampled at the station's grid
// cell centre, so gridded labels coincide with the truth field at label cells.
struct TruthOracle {
  FieldSpec field;
  double alpha = 1.2;

  double u3(double lat, double lon, std::int64_t t) const;
  double v3(double lat, double lon, std::int64_t t) const;
  double u10(double lat, double lon, std::int64_t t) const { return alpha * u3(lat, lon, t); }
  double v10(double lat, double lon, std::int64_t t) const { return alpha * v3(lat, lon, t); }
  double temperature(double lat, double lon, std::int64_t t) const;
  double humidity(double lat, double lon, std::int64_t t) const;
  double msl(double lat, double lon, std::int64_t t) const;
  double dem(double lat, double lon) const;
};

struct ScenarioFiles {
  std::string stations;
  std::string observations;
  std::string coarse_u10f;
  std::string coarse_v10f;
  std::string coarse_msl;
  std::string dem;
  std::string truth;
};

// Emits the full file bundle (ingest CSV schemas plus truth.csv) into out_dir.
// Byte-identical for identical configs.
ScenarioFiles generate(const ScenarioConfig& cfg, const std::string& out_dir);

TruthOracle oracle_of(const ScenarioConfig& cfg);

// Analytic truth per (tick, cell), loaded from truth.csv.
struct TruthTable {
  int n_lat = 0, n_lon = 0;
  std::vector<double> lat_centers, lon_centers;
  // time -> (2, n_lat, n_lon) flattened u then v
  std::map<std::int64_t, std::vector<double>> frames;
};

TruthTable load_truth(const std::string& path);

struct OracleMetrics {
  double mae_u = 0, mae_v = 0;
  double rmse_u = 0, rmse_v = 0;
  std::int64_t count = 0;
};

// Grid-wide error accumulation against the analytic truth.
class OracleEval {
 public:
  explicit OracleEval(const TruthTable& truth) : truth_(truth) {}

  // uv points at (2, n_lat, n_lon) for the given instant
  void add_frame(std::int64_t time, const float* uv, int n_lat, int n_lon);
  OracleMetrics metrics() const;

 private:
  const TruthTable& truth_;
  double abs_u_ = 0, abs_v_ = 0, sq_u_ = 0, sq_v_ = 0;
  std::int64_t count_ = 0;
};

}  // namespace windgrid::synthgen
