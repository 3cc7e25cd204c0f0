#pragma once

#include <optional>
#include <string>

#include "windgrid/abed.hpp"
#include "windgrid/evaluator.hpp"
#include "windgrid/featurecube.hpp"
#include "windgrid/geogrid.hpp"
#include "windgrid/synthgen.hpp"
#include "windgrid/trainer.hpp"

namespace windgrid::runconfig {

struct Paths {
  std::string stations;
  std::string observations;
  std::string corrections;  // optional
  std::string coarse_u10f;
  std::string coarse_v10f;
  std::string coarse_msl;
  std::string dem;
  std::string truth;       // optional, synthetic scenarios only
  std::string cube;        // cube file
  std::string checkpoint;  // model checkpoint
  std::string out_dir = "out";
};

struct CubeRange {
  std::string start;  // ISO-8601; empty = span of the observation file
  std::string end;
};

// Defaults follow the paper setup: 0.1 degree grid over the study area,
// D = 2 days / F = M = 4 h / S = 15 min windows, batch 64, lr 0.001,
// 200 epochs with patience 5.
struct RunConfig {
  geogrid::GridSpec grid;
  featurecube::WindowConfig window;
  abed::AbedConfig model;
  trainer::TrainConfig train;
  evaluator::StrataConfig strata;
  synthgen::ScenarioConfig synth;
  CubeRange cube;
  Paths paths;
};

RunConfig load(const std::string& path);  // throws ConfigError on unknown keys
RunConfig defaults();

// The effective merged config, echoed into every output directory.
std::string to_json_text(const RunConfig& cfg);
void echo(const RunConfig& cfg, const std::string& out_dir);

}  // namespace windgrid::runconfig
