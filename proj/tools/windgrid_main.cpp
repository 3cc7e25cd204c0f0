// Command-line entry point wiring the whole engine: scenario generation, cube
// assembly, training, prediction, evaluation, correlation maps, area export
// and the gradient self-check.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/parallel.hpp"
#include "windgrid/pipeline.hpp"
#include "windgrid/selfcheck.hpp"
#include "windgrid/synthgen.hpp"
#include "windgrid/timeutil.hpp"

namespace {

using namespace windgrid;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;  // -1 = keep config value
  int threads = 1;
};

runconfig::RunConfig effective_config(const GlobalArgs& g) {
  runconfig::RunConfig cfg =
      g.config_path.empty() ? runconfig::defaults() : runconfig::load(g.config_path);
  if (!g.out_dir.empty()) cfg.paths.out_dir = g.out_dir;
  if (g.seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(g.seed);
    cfg.synth.seed = static_cast<std::uint64_t>(g.seed);
  }
  // empty paths default to the bundle layout inside out_dir
  const std::string od = cfg.paths.out_dir;
  auto fallback = [&](std::string& field, const char* name) {
    if (field.empty()) field = od + "/" + name;
  };
  fallback(cfg.paths.stations, "stations.csv");
  fallback(cfg.paths.observations, "observations.csv");
  fallback(cfg.paths.coarse_u10f, "coarse_u10f.csv");
  fallback(cfg.paths.coarse_v10f, "coarse_v10f.csv");
  fallback(cfg.paths.coarse_msl, "coarse_msl.csv");
  fallback(cfg.paths.dem, "dem.csv");
  fallback(cfg.paths.truth, "truth.csv");
  fallback(cfg.paths.cube, "cube.wcub");
  fallback(cfg.paths.checkpoint, "model.wabd");
  return cfg;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_synth(const GlobalArgs& g) {
  runconfig::RunConfig cfg = effective_config(g);
  synthgen::generate(cfg.synth, cfg.paths.out_dir);
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << "scenario written to " << cfg.paths.out_dir << "\n";
  return 0;
}

int cmd_cube_build(const GlobalArgs& g) {
  runconfig::RunConfig cfg = effective_config(g);
  std::vector<std::string> warnings;
  const featurecube::FeatureCube cube = pipeline::build_cube_from_files(cfg, &warnings);
  print_warnings(warnings);
  std::filesystem::create_directories(cfg.paths.out_dir);
  featurecube::write_cube(cube, cfg.paths.cube);
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << "cube " << cube.n_times << " ticks, " << cube.n_lat << "x" << cube.n_lon
            << " cells, " << cube.label_stations.size() << " label stations -> " << cfg.paths.cube
            << "\n";
  return 0;
}

int cmd_train(const GlobalArgs& g) {
  runconfig::RunConfig cfg = effective_config(g);
  const featurecube::FeatureCube cube = featurecube::read_cube(cfg.paths.cube);
  std::vector<std::string> warnings;
  const auto samples =
      featurecube::make_samples(cube, cfg.window, featurecube::Subset::Train, &warnings);
  print_warnings(warnings);
  abed::AbedModel<float> model(cfg.model, cfg.train.seed);
  const trainer::TrainResult result =
      trainer::train(model, cube, cfg.window, samples, cfg.train, &warnings);
  print_warnings(warnings);

  std::filesystem::create_directories(cfg.paths.out_dir);
  model.save(cfg.paths.checkpoint);
  trainer::write_trainlog_csv(result.log, cfg.paths.out_dir + "/trainlog.csv");
  nlohmann::json summary{{"epochs_run", result.log.epochs.size()},
                         {"best_epoch", result.log.best_epoch},
                         {"best_val_loss", result.log.best_val_loss},
                         {"optimizer_steps", result.log.optimizer_steps},
                         {"stop_reason", result.log.stop_reason},
                         {"train_samples", samples.size()}};
  csvio::atomic_write_text(cfg.paths.out_dir + "/metrics.json", summary.dump(2) + "\n");
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << "trained " << result.log.epochs.size() << " epochs (" << result.log.stop_reason
            << "), best val loss " << result.log.best_val_loss << " -> " << cfg.paths.checkpoint
            << "\n";
  return 0;
}

int cmd_predict(const GlobalArgs& g, const std::vector<std::string>& t0_strings) {
  runconfig::RunConfig cfg = effective_config(g);
  const featurecube::FeatureCube cube = featurecube::read_cube(cfg.paths.cube);
  abed::AbedModel<float> model = abed::AbedModel<float>::load(cfg.paths.checkpoint, &cfg.model,
                                                              &std::cerr);
  const geogrid::Grid grid = geogrid::make_grid(cube.grid_spec);
  std::filesystem::create_directories(cfg.paths.out_dir);

  std::vector<int> t0s;
  for (const auto& s : t0_strings) {
    const std::int64_t t = timeutil::parse_iso8601(s);
    if (t < cube.start_time || (t - cube.start_time) % cube.step_seconds != 0)
      throw InputError("predict: t0 '" + s + "' is not a cube tick");
    t0s.push_back(static_cast<int>((t - cube.start_time) / cube.step_seconds));
  }
  const auto preds = trainer::predict(model, cube, cfg.window, t0s);
  for (const auto& p : preds) {
    const std::int64_t t0_abs = cube.time_at(p.t0);
    const timeutil::CivilDateTime c = timeutil::from_epoch(t0_abs);
    char name[64];
    std::snprintf(name, sizeof(name), "prediction_%04d%02d%02dT%02d%02d.csv", c.year, c.month,
                  c.day, c.hour, c.minute);
    csvio::Writer out(cfg.paths.out_dir + "/" + name,
                      {"time", "horizon_min", "lat", "lon", "u", "v"});
    for (int j = 0; j < cfg.window.sample_len(); ++j) {
      const int h = p.horizon_steps[static_cast<std::size_t>(j)];
      if (h < 1) continue;
      const std::string when =
          timeutil::format_iso8601(cube.time_at(p.t0 + cfg.window.shift_steps + j));
      for (int r = 0; r < cube.n_lat; ++r)
        for (int cc = 0; cc < cube.n_lon; ++cc)
          out.row({when, std::to_string(h * static_cast<int>(cube.step_seconds / 60)),
                   csvio::fmt_double(grid.lat_center(r)), csvio::fmt_double(grid.lon_center(cc)),
                   csvio::fmt_double(p.values.at(0, j, r, cc)),
                   csvio::fmt_double(p.values.at(1, j, r, cc))});
    }
    out.close();
    std::cout << "wrote " << name << "\n";
  }
  runconfig::echo(cfg, cfg.paths.out_dir);
  return 0;
}

int cmd_eval(const GlobalArgs& g) {
  runconfig::RunConfig cfg = effective_config(g);
  const featurecube::FeatureCube cube = featurecube::read_cube(cfg.paths.cube);
  abed::AbedModel<float> model = abed::AbedModel<float>::load(cfg.paths.checkpoint, &cfg.model,
                                                              &std::cerr);
  std::vector<std::string> warnings;
  const auto samples =
      featurecube::make_samples(cube, cfg.window, featurecube::Subset::Test, &warnings);
  print_warnings(warnings);
  if (samples.empty()) throw InputError("eval: the cube contains no test samples");

  const auto points = pipeline::collect_eval_points(model, cube, cfg.window, samples);
  const auto rows = evaluator::stratified_report(points, cfg.strata);
  std::filesystem::create_directories(cfg.paths.out_dir);
  evaluator::write_metrics_csv(rows, cfg.paths.out_dir + "/metrics.csv");

  nlohmann::json summary;
  summary["test_samples"] = samples.size();
  for (const auto& r : rows)
    if (r.season == "all" && r.daypart == "all" && r.horizon_min == 0 && r.station == "all" &&
        (r.quantity == "u" || r.quantity == "v") && r.metric != "r")
      summary[r.source][r.quantity][r.metric] = r.value;
  csvio::atomic_write_text(cfg.paths.out_dir + "/metrics.json", summary.dump(2) + "\n");
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << "metrics for " << points.at("model").size() << " points -> " << cfg.paths.out_dir
            << "/metrics.csv\n";
  return 0;
}

int cmd_correlate(const GlobalArgs& g, std::vector<int> horizons_min) {
  runconfig::RunConfig cfg = effective_config(g);
  const featurecube::FeatureCube cube = featurecube::read_cube(cfg.paths.cube);
  abed::AbedModel<float> model = abed::AbedModel<float>::load(cfg.paths.checkpoint, &cfg.model,
                                                              &std::cerr);
  if (horizons_min.empty()) horizons_min = {30, 120, 240, 480};

  ingest::ParseReport report;
  const auto stations = ingest::parse_catalog(cfg.paths.stations, report);
  auto observations = ingest::parse_observations(cfg.paths.observations, report);
  if (!cfg.paths.corrections.empty() && std::filesystem::exists(cfg.paths.corrections)) {
    const auto rules = ingest::parse_corrections(cfg.paths.corrections, report);
    ingest::apply_corrections(observations, rules, stations, report);
  }

  const geogrid::Grid grid = geogrid::make_grid(cube.grid_spec);
  std::vector<pipeline::StationCell> cells;
  std::map<std::string, std::pair<double, double>> coords;
  for (const auto& st : stations) {
    if (!grid.contains(st.lat, st.lon)) continue;
    cells.push_back({st.station_id, geogrid::bin_point(st.lat, st.lon, grid)});
    coords[st.station_id] = {st.lat, st.lon};
  }

  std::vector<std::string> warnings;
  const auto samples =
      featurecube::make_samples(cube, cfg.window, featurecube::Subset::Test, &warnings);
  print_warnings(warnings);
  if (samples.empty()) throw InputError("correlate: the cube contains no test samples");

  const auto preds =
      pipeline::collect_station_predictions(model, cube, cfg.window, samples, cells, horizons_min);
  const auto rows =
      evaluator::correlation_map(preds, pipeline::obs3_series(observations), coords, horizons_min);
  std::filesystem::create_directories(cfg.paths.out_dir);
  evaluator::write_corrmap_csv(rows, cfg.paths.out_dir + "/correlation_map.csv");
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << rows.size() << " correlation rows -> " << cfg.paths.out_dir
            << "/correlation_map.csv\n";
  return 0;
}

int cmd_export_area(const GlobalArgs& g, const std::string& t0_string, int horizon_min) {
  runconfig::RunConfig cfg = effective_config(g);
  const featurecube::FeatureCube cube = featurecube::read_cube(cfg.paths.cube);
  abed::AbedModel<float> model = abed::AbedModel<float>::load(cfg.paths.checkpoint, &cfg.model,
                                                              &std::cerr);
  const geogrid::Grid grid = geogrid::make_grid(cube.grid_spec);

  const std::int64_t t0_abs = timeutil::parse_iso8601(t0_string);
  if (t0_abs < cube.start_time || (t0_abs - cube.start_time) % cube.step_seconds != 0)
    throw InputError("export-area: t0 '" + t0_string + "' is not a cube tick");
  const int t0 = static_cast<int>((t0_abs - cube.start_time) / cube.step_seconds);
  const int step_min = static_cast<int>(cube.step_seconds / 60);
  if (horizon_min < step_min || horizon_min % step_min != 0)
    throw InputError("export-area: horizon must be a positive multiple of " +
                     std::to_string(step_min) + " minutes");
  const int h_steps = horizon_min / step_min;
  if (h_steps > cfg.window.max_horizon_steps())
    throw InputError("export-area: horizon beyond the window's F+M reach");
  const int j = cfg.window.duration_steps - cfg.window.shift_steps + h_steps - 1;

  const auto preds = trainer::predict(model, cube, cfg.window, {t0});
  const int t = t0 + cfg.window.shift_steps + j;
  std::vector<evaluator::StationTruth> truths;
  for (std::size_t s = 0; s < cube.label_stations.size(); ++s) {
    const auto& st = cube.label_stations[s];
    const std::size_t ui = cube.label_index(0, t, static_cast<int>(s));
    const std::size_t vi = cube.label_index(1, t, static_cast<int>(s));
    if (!cube.label_valid[ui] || !cube.label_valid[vi]) continue;
    truths.push_back({st.station_id, st.lat, st.lon, cube.labels[ui], cube.labels[vi]});
  }
  const std::size_t plane = static_cast<std::size_t>(cube.n_lat) * cube.n_lon;
  std::vector<float> frame(2 * plane);
  for (std::size_t k = 0; k < plane; ++k) {
    frame[k] = preds[0].values[static_cast<std::int64_t>(j) * plane + static_cast<std::int64_t>(k)];
    frame[plane + k] =
        preds[0].values[(static_cast<std::int64_t>(cfg.window.sample_len()) + j) * plane +
                        static_cast<std::int64_t>(k)];
  }
  std::filesystem::create_directories(cfg.paths.out_dir);
  evaluator::export_area_forecast(frame.data(), grid, truths,
                                  cfg.paths.out_dir + "/area_forecast_cells.csv",
                                  cfg.paths.out_dir + "/area_forecast_stations.csv");
  runconfig::echo(cfg, cfg.paths.out_dir);
  std::cout << "area forecast at " << timeutil::format_iso8601(cube.time_at(t)) << " (horizon "
            << horizon_min << " min) -> " << cfg.paths.out_dir << "\n";
  return 0;
}

int cmd_selfcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const selfcheck::Result result = selfcheck::run_selfcheck();
  for (const auto& item : result.items)
    std::printf("%-28s max rel err %.3e  %s\n", item.name.c_str(), item.max_rel_err,
                item.pass ? "ok" : "FAIL");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("selfcheck %s (worst %.3e, %.1f s)\n", result.ok ? "passed" : "FAILED",
              result.worst, secs);
  return result.ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridded wind forecasting engine"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "run configuration JSON");
  app.add_option("--seed", g.seed, "override the configured seeds");
  app.add_option("--threads", g.threads, "worker cap for data-parallel loops");
  app.add_option("--out", g.out_dir, "output directory");

  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario bundle");
  auto* cube = app.add_subcommand("cube", "feature cube operations");
  auto* cube_build = cube->add_subcommand("build", "assemble the feature cube from input files");
  cube->require_subcommand(1);
  auto* train = app.add_subcommand("train", "train the forecasting model");

  std::vector<std::string> t0_list;
  auto* predict = app.add_subcommand("predict", "predict windows at given start times");
  predict->add_option("--t0", t0_list, "window start time (ISO-8601), repeatable")->required();

  auto* eval = app.add_subcommand("eval", "stratified test-set metrics");

  std::vector<int> horizons;
  auto* correlate = app.add_subcommand("correlate", "station correlation map");
  correlate->add_option("--horizon", horizons,
                        "horizon minutes, repeatable (default 30/120/240/480)");

  std::string area_t0;
  int area_horizon = 30;
  auto* export_area = app.add_subcommand("export-area", "plot-ready area forecast");
  export_area->add_option("--t0", area_t0, "window start time (ISO-8601)")->required();
  export_area->add_option("--horizon", area_horizon, "horizon in minutes");

  auto* selfcheck_cmd = app.add_subcommand("selfcheck", "finite-difference gradient verification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    set_num_threads(g.threads);
    if (*synth) return cmd_synth(g);
    if (*cube_build) return cmd_cube_build(g);
    if (*train) return cmd_train(g);
    if (*predict) return cmd_predict(g, t0_list);
    if (*eval) return cmd_eval(g);
    if (*correlate) return cmd_correlate(g, horizons);
    if (*export_area) return cmd_export_area(g, area_t0, area_horizon);
    if (*selfcheck_cmd) return cmd_selfcheck();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
