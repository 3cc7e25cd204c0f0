#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "windgrid/geogrid.hpp"
#include "windgrid/ingest.hpp"
#include "windgrid/tensor.hpp"

namespace windgrid::featurecube {

// Frozen channel order; any reordering is a format-version change.
inline constexpr int kNumFeatures = 14;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {
    "T",         "H",         "u3",       "v3",       "u10f",    "v10f",   "msl",
    "dem",       "sin_month", "cos_month", "sin_hour", "cos_hour", "sin_doy", "cos_doy"};

struct LabelStation {
  std::string station_id;
  double lat = 0;
  double lon = 0;
  geogrid::CellIndex cell;
};

// The (feature, time, lat, lon) array feeding the model, plus the per-station
// 10 m labels and their validity mask.
struct FeatureCube {
  geogrid::GridSpec grid_spec;
  int n_lat = 0;
  int n_lon = 0;
  std::int64_t start_time = 0;
  std::int64_t step_seconds = 900;
  int n_times = 0;

  std::vector<float> data;  // (14, n_times, n_lat, n_lon) C-order
  std::vector<LabelStation> label_stations;
  std::vector<float> labels;             // (2, n_times, n_stations)
  std::vector<std::uint8_t> label_valid;  // same shape

  std::int64_t time_at(int t) const { return start_time + static_cast<std::int64_t>(t) * step_seconds; }

  std::size_t data_index(int f, int t, int r, int c) const {
    return ((static_cast<std::size_t>(f) * n_times + t) * n_lat + r) * n_lon + c;
  }
  float& at(int f, int t, int r, int c) { return data[data_index(f, t, r, c)]; }
  float at(int f, int t, int r, int c) const { return data[data_index(f, t, r, c)]; }

  std::size_t label_index(int comp, int t, int s) const {
    return (static_cast<std::size_t>(comp) * n_times + t) * label_stations.size() + s;
  }
};

// Fig. 2 window scheme in 15-minute steps: duration D, forward window F,
// label shift M, slide S. One sample reads cube ticks [t0, t0+D+F+M).
struct WindowConfig {
  int step_seconds = 900;
  int duration_steps = 192;  // D, 2 days
  int forward_steps = 16;    // F, 4 hours
  int shift_steps = 16;      // M, 4 hours
  int slide_steps = 1;       // S, 15 minutes

  int sample_len() const { return duration_steps + forward_steps; }       // L = D+F
  int span_steps() const { return duration_steps + forward_steps + shift_steps; }
  int max_horizon_steps() const { return forward_steps + shift_steps; }

  void validate() const {
    if (step_seconds < 1 || duration_steps < 1 || forward_steps < 1 || shift_steps < 1 ||
        slide_steps < 1)
      throw ConfigError("window: all window parameters must be positive");
  }
};

enum class Subset { Train, Test };

struct SampleRef {
  int t0 = 0;
};

struct AssembleSources {
  std::vector<ingest::StationMeta> stations;
  std::vector<ingest::ObservationRecord> observations;  // corrections already applied
  geogrid::TimeSeriesField u10f, v10f, msl;             // on the target grid at cube step
  geogrid::GriddedField dem;
};

// Regrids one coarse series onto the target grid and resamples it to
// out_step_seconds (bilinear in space, linear in time).
geogrid::TimeSeriesField regrid_coarse(const ingest::CoarseSeries& coarse,
                                       const geogrid::Grid& target,
                                       std::int64_t out_step_seconds);

FeatureCube assemble_cube(const AssembleSources& src, const geogrid::Grid& grid,
                          std::int64_t start_time, std::int64_t end_time, std::int64_t step_seconds,
                          std::vector<std::string>* warnings = nullptr);

// One tag per cube tick: true = test. A tick is test iff its UTC calendar day
// falls in the last five days of its month.
std::vector<std::uint8_t> split_train_test(const FeatureCube& cube);
bool is_test_time(std::int64_t t);

// Candidate t0 per slide step with the whole span inside the cube; a sample is
// kept for `test` iff its evaluation span is fully test-tagged, for `train`
// iff its full span is fully train-tagged. Straddling samples are dropped.
std::vector<SampleRef> make_samples(const FeatureCube& cube, const WindowConfig& cfg,
                                    Subset subset, std::vector<std::string>* warnings = nullptr);

// Horizon (steps ahead of the last fully observed instant) of window index j:
// 15 minutes at the first predicted tick t0+D, F+M steps (8 h by default) at
// the last. Non-positive values mark the overlap with the observed period.
inline int horizon_steps(const WindowConfig& cfg, int j) {
  return j - cfg.duration_steps + cfg.shift_steps + 1;
}

struct SampleBatch {
  Tensor<float> x;                 // (b, 14, L, n_lat, n_lon)
  Tensor<float> y;                 // (b, 2, L, n_lat, n_lon), zero where invalid
  Tensor<std::uint8_t> label_mask;  // same shape as y
  std::vector<int> t0s;
};

// Materializes windows: observation channels are zeroed at ticks >= t0+D and
// labels are placed at the label cells with their validity mask.
SampleBatch materialize(const FeatureCube& cube, const WindowConfig& cfg,
                        const std::vector<SampleRef>& refs, std::size_t begin, std::size_t count);

void write_cube(const FeatureCube& cube, const std::string& path);
FeatureCube read_cube(const std::string& path);

}  // namespace windgrid::featurecube
