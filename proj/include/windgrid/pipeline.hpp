#pragma once

#include <map>
#include <string>
#include <vector>

#include "windgrid/abed.hpp"
#include "windgrid/evaluator.hpp"
#include "windgrid/featurecube.hpp"
#include "windgrid/runconfig.hpp"
#include "windgrid/trainer.hpp"

// Orchestration shared by the CLI commands and the acceptance suite.
namespace windgrid::pipeline {

// Parses the input files named in cfg.paths, regrids the coarse fields and
// assembles the cube over cfg.cube.start/end (observation span when empty).
featurecube::FeatureCube build_cube_from_files(const runconfig::RunConfig& cfg,
                                               std::vector<std::string>* warnings = nullptr);

// Predicts over the given samples and pairs every valid label point at a
// positive horizon with the model output and with the cube's coarse-forecast
// channels ("model" and "ecmwf" sources).
std::map<std::string, std::vector<evaluator::EvalPoint>> collect_eval_points(
    abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
    const featurecube::WindowConfig& wcfg,
    const std::vector<featurecube::SampleRef>& samples, int batch_size = 16);

// Model predictions sampled at arbitrary station cells, restricted to the
// requested horizons, for the correlation-map protocol.
struct StationCell {
  std::string station_id;
  geogrid::CellIndex cell;
};

std::vector<evaluator::StationPrediction> collect_station_predictions(
    abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
    const featurecube::WindowConfig& wcfg, const std::vector<featurecube::SampleRef>& samples,
    const std::vector<StationCell>& station_cells, const std::vector<int>& horizons_min,
    int batch_size = 16);

// 3 m observation series per station, converted to u/v.
std::map<std::string, std::map<std::int64_t, evaluator::Obs3m>> obs3_series(
    const std::vector<ingest::ObservationRecord>& records);

}  // namespace windgrid::pipeline
