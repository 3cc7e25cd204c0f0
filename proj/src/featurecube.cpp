#include "windgrid/featurecube.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"
#include "windgrid/binio.hpp"
#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::featurecube {

namespace {

void warn(std::vector<std::string>* sink, std::string msg) {
  if (sink) sink->push_back(std::move(msg));
}

}  // namespace

geogrid::TimeSeriesField regrid_coarse(const ingest::CoarseSeries& coarse,
                                       const geogrid::Grid& target,
                                       std::int64_t out_step_seconds) {
  geogrid::TimeSeriesField spatial;
  spatial.times = coarse.series.times;
  spatial.frames.reserve(coarse.series.frames.size());
  for (const auto& frame : coarse.series.frames)
    spatial.frames.push_back(geogrid::interp_bilinear(frame, coarse.grid, target));
  return geogrid::resample_time_linear(spatial, out_step_seconds);
}

FeatureCube assemble_cube(const AssembleSources& src, const geogrid::Grid& grid,
                          std::int64_t start_time, std::int64_t end_time, std::int64_t step_seconds,
                          std::vector<std::string>* warnings) {
  if (end_time < start_time) throw InputError("assemble_cube: end_time before start_time");
  if (step_seconds < 1 || (end_time - start_time) % step_seconds != 0)
    throw InputError("assemble_cube: time range is not a whole number of steps");

  FeatureCube cube;
  cube.grid_spec = grid.spec;
  cube.n_lat = grid.n_lat;
  cube.n_lon = grid.n_lon;
  cube.start_time = start_time;
  cube.step_seconds = step_seconds;
  cube.n_times = static_cast<int>((end_time - start_time) / step_seconds) + 1;
  cube.data.assign(static_cast<std::size_t>(kNumFeatures) * cube.n_times * cube.n_lat * cube.n_lon,
                   0.0f);

  // station -> cell with the nearest-to-centre collision rule
  struct Placed {
    const ingest::StationMeta* meta;
    geogrid::CellIndex cell;
    double dist2;
  };
  std::unordered_map<std::int64_t, Placed> by_cell;
  auto cell_key = [&](const geogrid::CellIndex& c) {
    return static_cast<std::int64_t>(c.row) * grid.n_lon + c.col;
  };
  for (const auto& st : src.stations) {
    if (!grid.contains(st.lat, st.lon)) {
      warn(warnings, "station '" + st.station_id + "' outside grid, excluded");
      continue;
    }
    const geogrid::CellIndex cell = geogrid::bin_point(st.lat, st.lon, grid);
    const double dlat = st.lat - grid.lat_center(cell.row);
    const double dlon = st.lon - grid.lon_center(cell.col);
    const double d2 = dlat * dlat + dlon * dlon;
    auto [it, inserted] = by_cell.try_emplace(cell_key(cell), Placed{&st, cell, d2});
    if (!inserted) {
      if (d2 < it->second.dist2) {
        warn(warnings, "station '" + it->second.meta->station_id + "' shadowed by '" +
                           st.station_id + "' in cell (" + std::to_string(cell.row) + "," +
                           std::to_string(cell.col) + ")");
        it->second = Placed{&st, cell, d2};
      } else {
        warn(warnings, "station '" + st.station_id + "' shadowed by '" +
                           it->second.meta->station_id + "' in cell (" + std::to_string(cell.row) +
                           "," + std::to_string(cell.col) + ")");
      }
    }
  }

  std::unordered_map<std::string, std::pair<geogrid::CellIndex, int>> station_cell;  // id -> (cell, label idx)
  for (const auto& [key, placed] : by_cell) {
    (void)key;
    station_cell[placed.meta->station_id] = {placed.cell, -1};
  }
  // label stations in catalog order for determinism
  for (const auto& st : src.stations) {
    auto it = station_cell.find(st.station_id);
    if (it == station_cell.end() || !st.has_10m_labels) continue;
    it->second.second = static_cast<int>(cube.label_stations.size());
    cube.label_stations.push_back({st.station_id, st.lat, st.lon, it->second.first});
  }
  cube.labels.assign(2 * static_cast<std::size_t>(cube.n_times) * cube.label_stations.size(),
                     0.0f);
  cube.label_valid.assign(cube.labels.size(), 0);

  // observation channels and labels
  for (const auto& rec : src.observations) {
    auto it = station_cell.find(rec.station_id);
    if (it == station_cell.end()) continue;
    if (rec.timestamp < start_time || rec.timestamp > end_time) continue;
    if ((rec.timestamp - start_time) % step_seconds != 0) continue;
    const int t = static_cast<int>((rec.timestamp - start_time) / step_seconds);
    const auto [cell, label_idx] = it->second;
    if (rec.temp_c) cube.at(0, t, cell.row, cell.col) = static_cast<float>(*rec.temp_c);
    if (rec.humidity_pct) cube.at(1, t, cell.row, cell.col) = static_cast<float>(*rec.humidity_pct);
    if (rec.wind3_speed && rec.wind3_dir) {
      const ingest::UV uv = ingest::wind_to_uv(*rec.wind3_speed, *rec.wind3_dir);
      cube.at(2, t, cell.row, cell.col) = static_cast<float>(uv.u);
      cube.at(3, t, cell.row, cell.col) = static_cast<float>(uv.v);
    }
    if (label_idx >= 0 && rec.wind10_speed && rec.wind10_dir) {
      const ingest::UV uv = ingest::wind_to_uv(*rec.wind10_speed, *rec.wind10_dir);
      cube.labels[cube.label_index(0, t, label_idx)] = static_cast<float>(uv.u);
      cube.labels[cube.label_index(1, t, label_idx)] = static_cast<float>(uv.v);
      cube.label_valid[cube.label_index(0, t, label_idx)] = 1;
      cube.label_valid[cube.label_index(1, t, label_idx)] = 1;
    }
  }

  // forecast channels from the regridded coarse series
  const geogrid::TimeSeriesField* coarse[3] = {&src.u10f, &src.v10f, &src.msl};
  const char* coarse_names[3] = {"u10f", "v10f", "msl"};
  for (int k = 0; k < 3; ++k) {
    const auto& series = *coarse[k];
    if (series.times.empty())
      throw InputError(std::string("assemble_cube: coarse series ") + coarse_names[k] +
                       " is empty");
    if (series.times.size() > 1) series.step_seconds();  // validates uniformity
    std::unordered_map<std::int64_t, std::size_t> frame_at;
    for (std::size_t i = 0; i < series.times.size(); ++i) frame_at[series.times[i]] = i;
    for (int t = 0; t < cube.n_times; ++t) {
      const std::int64_t when = cube.time_at(t);
      auto fit = frame_at.find(when);
      if (fit == frame_at.end())
        throw InputError(std::string("assemble_cube: coarse series ") + coarse_names[k] +
                         " does not cover " + timeutil::format_iso8601(when));
      const geogrid::GriddedField& f = series.frames[fit->second];
      if (f.n_lat != cube.n_lat || f.n_lon != cube.n_lon)
        throw ShapeError("assemble_cube: coarse frame shape mismatch");
      for (int r = 0; r < cube.n_lat; ++r)
        for (int c = 0; c < cube.n_lon; ++c)
          cube.at(4 + k, t, r, c) = static_cast<float>(f.at(r, c));
    }
  }

  // terrain, tiled over time
  if (src.dem.n_lat != cube.n_lat || src.dem.n_lon != cube.n_lon)
    throw ShapeError("assemble_cube: DEM field shape mismatch");
  for (int t = 0; t < cube.n_times; ++t)
    for (int r = 0; r < cube.n_lat; ++r)
      for (int c = 0; c < cube.n_lon; ++c)
        cube.at(7, t, r, c) = static_cast<float>(src.dem.at(r, c));

  // time features, tiled over space
  for (int t = 0; t < cube.n_times; ++t) {
    const ingest::TimeFeatures tf = ingest::time_features(cube.time_at(t));
    const double vals[6] = {tf.sin_month, tf.cos_month, tf.sin_hour,
                            tf.cos_hour,  tf.sin_doy,   tf.cos_doy};
    for (int k = 0; k < 6; ++k) {
      const float v = static_cast<float>(vals[k]);
      for (int r = 0; r < cube.n_lat; ++r)
        for (int c = 0; c < cube.n_lon; ++c) cube.at(8 + k, t, r, c) = v;
    }
  }
  return cube;
}

bool is_test_time(std::int64_t t) {
  const timeutil::CivilDateTime c = timeutil::from_epoch(t);
  return c.day > timeutil::days_in_month(c.year, c.month) - 5;
}

std::vector<std::uint8_t> split_train_test(const FeatureCube& cube) {
  std::vector<std::uint8_t> tags(static_cast<std::size_t>(cube.n_times), 0);
  for (int t = 0; t < cube.n_times; ++t) tags[static_cast<std::size_t>(t)] = is_test_time(cube.time_at(t)) ? 1 : 0;
  return tags;
}

std::vector<SampleRef> make_samples(const FeatureCube& cube, const WindowConfig& cfg,
                                    Subset subset, std::vector<std::string>* warnings) {
  cfg.validate();
  if (cfg.step_seconds != cube.step_seconds)
    throw ConfigError("make_samples: window step does not match cube step");
  const int span = cfg.span_steps();
  std::vector<SampleRef> out;
  if (cube.n_times < span) {
    warn(warnings, "cube too short for one sample (" + std::to_string(cube.n_times) + " < " +
                       std::to_string(span) + " ticks)");
    return out;
  }
  const std::vector<std::uint8_t> tags = split_train_test(cube);
  for (int t0 = 0; t0 + span <= cube.n_times; t0 += cfg.slide_steps) {
    bool all_train = true;
    for (int j = 0; j < span && all_train; ++j) all_train = !tags[static_cast<std::size_t>(t0 + j)];
    bool eval_all_test = true;
    for (int j = cfg.duration_steps; j < span && eval_all_test; ++j)
      eval_all_test = tags[static_cast<std::size_t>(t0 + j)] != 0;
    if (subset == Subset::Train && all_train)
      out.push_back({t0});
    else if (subset == Subset::Test && eval_all_test)
      out.push_back({t0});
    // straddling spans belong to neither subset
  }
  return out;
}

SampleBatch materialize(const FeatureCube& cube, const WindowConfig& cfg,
                        const std::vector<SampleRef>& refs, std::size_t begin, std::size_t count) {
  cfg.validate();
  const int L = cfg.sample_len();
  const int b = static_cast<int>(count);
  const int n_lat = cube.n_lat, n_lon = cube.n_lon;
  SampleBatch batch;
  batch.x = Tensor<float>({b, kNumFeatures, L, n_lat, n_lon});
  batch.y = Tensor<float>({b, 2, L, n_lat, n_lon});
  batch.label_mask = Tensor<std::uint8_t>({b, 2, L, n_lat, n_lon});

  const std::size_t plane = static_cast<std::size_t>(n_lat) * n_lon;
  for (int i = 0; i < b; ++i) {
    const int t0 = refs.at(begin + static_cast<std::size_t>(i)).t0;
    if (t0 < 0 || t0 + cfg.span_steps() > cube.n_times)
      throw OutOfDomainError("sample window [" + std::to_string(t0) + ", " +
                             std::to_string(t0 + cfg.span_steps()) + ") outside cube");
    batch.t0s.push_back(t0);
    for (int f = 0; f < kNumFeatures; ++f) {
      const bool observation = f < 4;
      for (int j = 0; j < L; ++j) {
        float* dst = batch.x.data() +
                     (((static_cast<std::size_t>(i) * kNumFeatures + f) * L + j) * plane);
        if (observation && j >= cfg.duration_steps) continue;  // future observations zeroed
        const float* src = cube.data.data() + cube.data_index(f, t0 + j, 0, 0);
        std::copy(src, src + plane, dst);
      }
    }
    for (int comp = 0; comp < 2; ++comp)
      for (int j = 0; j < L; ++j) {
        const int t = t0 + cfg.shift_steps + j;
        float* ydst =
            batch.y.data() + (((static_cast<std::size_t>(i) * 2 + comp) * L + j) * plane);
        std::uint8_t* mdst =
            batch.label_mask.data() + (((static_cast<std::size_t>(i) * 2 + comp) * L + j) * plane);
        for (std::size_t s = 0; s < cube.label_stations.size(); ++s) {
          const auto& st = cube.label_stations[s];
          const std::size_t li = cube.label_index(comp, t, static_cast<int>(s));
          if (!cube.label_valid[li]) continue;
          const std::size_t cell = static_cast<std::size_t>(st.cell.row) * n_lon + st.cell.col;
          ydst[cell] = cube.labels[li];
          mdst[cell] = 1;
        }
      }
  }
  return batch;
}

void write_cube(const FeatureCube& cube, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + tmp + "' for writing");
    binio::put_magic(out, "WCUB");
    binio::put_u32(out, 1);
    nlohmann::json stations = nlohmann::json::array();
    for (const auto& s : cube.label_stations)
      stations.push_back({{"id", s.station_id},
                          {"lat", s.lat},
                          {"lon", s.lon},
                          {"row", s.cell.row},
                          {"col", s.cell.col}});
    nlohmann::json names = nlohmann::json::array();
    for (const char* n : kFeatureNames) names.push_back(n);
    nlohmann::json header{
        {"dims",
         {{"features", kNumFeatures}, {"times", cube.n_times}, {"lat", cube.n_lat}, {"lon", cube.n_lon}}},
        {"feature_names", names},
        {"start_time", timeutil::format_iso8601(cube.start_time)},
        {"step_seconds", cube.step_seconds},
        {"grid",
         {{"lat_start", cube.grid_spec.lat_start},
          {"lat_end", cube.grid_spec.lat_end},
          {"lon_start", cube.grid_spec.lon_start},
          {"lon_end", cube.grid_spec.lon_end},
          {"cell_deg", cube.grid_spec.cell_deg}}},
        {"label_stations", stations}};
    binio::put_blob(out, header.dump());
    binio::put_f32_array(out, cube.data.data(), cube.data.size());
    binio::put_f32_array(out, cube.labels.data(), cube.labels.size());
    // validity bitmap, LSB first
    std::uint8_t acc = 0;
    int nbits = 0;
    for (std::size_t i = 0; i < cube.label_valid.size(); ++i) {
      if (cube.label_valid[i]) acc = static_cast<std::uint8_t>(acc | (1u << nbits));
      if (++nbits == 8) {
        out.put(static_cast<char>(acc));
        acc = 0;
        nbits = 0;
      }
    }
    if (nbits > 0) out.put(static_cast<char>(acc));
    out.flush();
    if (!out) throw InputError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw InputError("cannot rename '" + tmp + "' to '" + path + "'");
}

FeatureCube read_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open cube '" + path + "'");
  binio::check_magic(in, "WCUB", path);
  const std::uint32_t version = binio::get_u32(in);
  if (version != 1)
    throw FormatError(path + ": unsupported cube version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(binio::get_blob(in, path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad cube header: " + e.what());
  }

  FeatureCube cube;
  try {
    const auto& dims = header.at("dims");
    if (dims.at("features").get<int>() != kNumFeatures)
      throw FormatError(path + ": cube carries a foreign feature set");
    const auto names = header.at("feature_names").get<std::vector<std::string>>();
    for (int i = 0; i < kNumFeatures; ++i)
      if (names.at(static_cast<std::size_t>(i)) != kFeatureNames[static_cast<std::size_t>(i)])
        throw FormatError(path + ": feature order mismatch at index " + std::to_string(i));
    cube.n_times = dims.at("times").get<int>();
    cube.n_lat = dims.at("lat").get<int>();
    cube.n_lon = dims.at("lon").get<int>();
    cube.start_time = timeutil::parse_iso8601(header.at("start_time").get<std::string>());
    cube.step_seconds = header.at("step_seconds").get<std::int64_t>();
    const auto& g = header.at("grid");
    cube.grid_spec = {g.at("lat_start").get<double>(), g.at("lat_end").get<double>(),
                      g.at("lon_start").get<double>(), g.at("lon_end").get<double>(),
                      g.at("cell_deg").get<double>()};
    for (const auto& s : header.at("label_stations")) {
      LabelStation st;
      st.station_id = s.at("id").get<std::string>();
      st.lat = s.at("lat").get<double>();
      st.lon = s.at("lon").get<double>();
      st.cell = {s.at("row").get<int>(), s.at("col").get<int>()};
      cube.label_stations.push_back(std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad cube header: " + e.what());
  }

  const std::size_t data_n =
      static_cast<std::size_t>(kNumFeatures) * cube.n_times * cube.n_lat * cube.n_lon;
  const std::size_t label_n = 2 * static_cast<std::size_t>(cube.n_times) * cube.label_stations.size();
  cube.data.resize(data_n);
  binio::get_f32_array(in, cube.data.data(), data_n);
  cube.labels.resize(label_n);
  binio::get_f32_array(in, cube.labels.data(), label_n);
  cube.label_valid.assign(label_n, 0);
  for (std::size_t i = 0; i < label_n; i += 8) {
    const int byte = in.get();
    if (byte < 0) throw FormatError(path + ": truncated validity bitmap");
    for (std::size_t bit = 0; bit < 8 && i + bit < label_n; ++bit)
      cube.label_valid[i + bit] = (byte >> bit) & 1;
  }
  if (!in) throw FormatError(path + ": truncated cube payload");
  return cube;
}

}  // namespace windgrid::featurecube
