#include "windgrid/pipeline.hpp"

#include <algorithm>

#include "windgrid/error.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::pipeline {

featurecube::FeatureCube build_cube_from_files(const runconfig::RunConfig& cfg,
                                               std::vector<std::string>* warnings) {
  ingest::ParseReport report;
  featurecube::AssembleSources src;
  src.stations = ingest::parse_catalog(cfg.paths.stations, report);
  src.observations = ingest::parse_observations(cfg.paths.observations, report);
  if (!cfg.paths.corrections.empty()) {
    const auto rules = ingest::parse_corrections(cfg.paths.corrections, report);
    ingest::apply_corrections(src.observations, rules, src.stations, report);
  }

  const geogrid::Grid grid = geogrid::make_grid(cfg.grid);
  const auto coarse_u = ingest::parse_coarse(cfg.paths.coarse_u10f, report);
  const auto coarse_v = ingest::parse_coarse(cfg.paths.coarse_v10f, report);
  const auto coarse_p = ingest::parse_coarse(cfg.paths.coarse_msl, report);
  const std::int64_t step = cfg.window.step_seconds;
  src.u10f = featurecube::regrid_coarse(coarse_u, grid, step);
  src.v10f = featurecube::regrid_coarse(coarse_v, grid, step);
  src.msl = featurecube::regrid_coarse(coarse_p, grid, step);
  src.dem = geogrid::bin_terrain(ingest::parse_dem(cfg.paths.dem, report), grid);

  std::int64_t start, end;
  if (!cfg.cube.start.empty() && !cfg.cube.end.empty()) {
    start = timeutil::parse_iso8601(cfg.cube.start);
    end = timeutil::parse_iso8601(cfg.cube.end);
  } else {
    if (src.observations.empty())
      throw InputError("cube build: no observations and no explicit cube.start/end range");
    start = src.observations.front().timestamp;
    end = start;
    for (const auto& rec : src.observations) {
      start = std::min(start, rec.timestamp);
      end = std::max(end, rec.timestamp);
    }
  }

  if (warnings) {
    for (const auto& r : report.rejects)
      warnings->push_back("rejected input line " + std::to_string(r.line_no) + ": " + r.reason);
    for (const auto& w : report.warnings) warnings->push_back(w);
  }
  return featurecube::assemble_cube(src, grid, start, end, step, warnings);
}

std::map<std::string, std::vector<evaluator::EvalPoint>> collect_eval_points(
    abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
    const featurecube::WindowConfig& wcfg,
    const std::vector<featurecube::SampleRef>& samples, int batch_size) {
  std::map<std::string, std::vector<evaluator::EvalPoint>> out;
  auto& model_pts = out["model"];
  auto& ecmwf_pts = out["ecmwf"];

  std::vector<int> t0s;
  t0s.reserve(samples.size());
  for (const auto& s : samples) t0s.push_back(s.t0);
  const auto preds = trainer::predict(model, cube, wcfg, t0s, batch_size);

  const int L = wcfg.sample_len();
  for (const auto& p : preds) {
    for (int j = 0; j < L; ++j) {
      const int h = featurecube::horizon_steps(wcfg, j);
      if (h < 1) continue;
      const int t = p.t0 + wcfg.shift_steps + j;
      for (std::size_t s = 0; s < cube.label_stations.size(); ++s) {
        const auto& st = cube.label_stations[s];
        const std::size_t ui = cube.label_index(0, t, static_cast<int>(s));
        const std::size_t vi = cube.label_index(1, t, static_cast<int>(s));
        if (!cube.label_valid[ui] || !cube.label_valid[vi]) continue;
        evaluator::EvalPoint pt;
        pt.station = st.station_id;
        pt.time = cube.time_at(t);
        pt.horizon_min = h * static_cast<int>(wcfg.step_seconds / 60);
        pt.y_u = cube.labels[ui];
        pt.y_v = cube.labels[vi];
        pt.p_u = p.values.at(0, j, st.cell.row, st.cell.col);
        pt.p_v = p.values.at(1, j, st.cell.row, st.cell.col);
        model_pts.push_back(pt);
        pt.p_u = cube.at(4, t, st.cell.row, st.cell.col);
        pt.p_v = cube.at(5, t, st.cell.row, st.cell.col);
        ecmwf_pts.push_back(pt);
      }
    }
  }
  return out;
}

std::vector<evaluator::StationPrediction> collect_station_predictions(
    abed::AbedModel<float>& model, const featurecube::FeatureCube& cube,
    const featurecube::WindowConfig& wcfg, const std::vector<featurecube::SampleRef>& samples,
    const std::vector<StationCell>& station_cells, const std::vector<int>& horizons_min,
    int batch_size) {
  std::vector<evaluator::StationPrediction> out;
  std::vector<int> t0s;
  t0s.reserve(samples.size());
  for (const auto& s : samples) t0s.push_back(s.t0);
  const auto preds = trainer::predict(model, cube, wcfg, t0s, batch_size);
  const int step_min = static_cast<int>(wcfg.step_seconds / 60);
  const int L = wcfg.sample_len();

  for (const auto& p : preds)
    for (int j = 0; j < L; ++j) {
      const int h = featurecube::horizon_steps(wcfg, j);
      if (h < 1) continue;
      const int h_min = h * step_min;
      if (std::find(horizons_min.begin(), horizons_min.end(), h_min) == horizons_min.end())
        continue;
      const int t = p.t0 + wcfg.shift_steps + j;
      for (const auto& sc : station_cells) {
        evaluator::StationPrediction sp;
        sp.station = sc.station_id;
        sp.time = cube.time_at(t);
        sp.horizon_min = h_min;
        sp.p_u = p.values.at(0, j, sc.cell.row, sc.cell.col);
        sp.p_v = p.values.at(1, j, sc.cell.row, sc.cell.col);
        out.push_back(sp);
      }
    }
  return out;
}

std::map<std::string, std::map<std::int64_t, evaluator::Obs3m>> obs3_series(
    const std::vector<ingest::ObservationRecord>& records) {
  std::map<std::string, std::map<std::int64_t, evaluator::Obs3m>> out;
  for (const auto& rec : records) {
    if (!rec.wind3_speed || !rec.wind3_dir) continue;
    const ingest::UV uv = ingest::wind_to_uv(*rec.wind3_speed, *rec.wind3_dir);
    out[rec.station_id][rec.timestamp] = {uv.u, uv.v};
  }
  return out;
}

}  // namespace windgrid::pipeline
