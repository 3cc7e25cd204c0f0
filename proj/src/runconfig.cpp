#include "windgrid/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::runconfig {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) {
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
    }
  }
}

int parse_clock_minutes(const std::string& s) {
  int h = 0, m = 0;
  if (std::sscanf(s.c_str(), "%d:%d", &h, &m) != 2 || h < 0 || h > 24 || m < 0 || m > 59)
    throw ConfigError("config: bad clock time '" + s + "' (expected HH:MM)");
  return h * 60 + m;
}

std::string clock_string(int minutes) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d:%02d", minutes / 60, minutes % 60);
  return buf;
}

}  // namespace

RunConfig defaults() {
  RunConfig cfg;
  cfg.synth.grid = cfg.grid;  // scenarios live on the target grid unless overridden
  return cfg;
}

RunConfig load(const std::string& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  check_keys(root, "(top level)",
             {"grid", "window", "model", "train", "strata", "synth", "cube", "paths"});

  if (root.contains("grid")) {
    const auto& g = root["grid"];
    check_keys(g, "grid", {"lat_start", "lat_end", "lon_start", "lon_end", "cell_deg"});
    take(g, "lat_start", cfg.grid.lat_start);
    take(g, "lat_end", cfg.grid.lat_end);
    take(g, "lon_start", cfg.grid.lon_start);
    take(g, "lon_end", cfg.grid.lon_end);
    take(g, "cell_deg", cfg.grid.cell_deg);
  }
  cfg.synth.grid = cfg.grid;  // tracks the target grid; synth.grid may override below
  if (root.contains("window")) {
    const auto& w = root["window"];
    check_keys(w, "window",
               {"duration_steps", "forward_steps", "shift_steps", "slide_steps", "step_seconds"});
    take(w, "duration_steps", cfg.window.duration_steps);
    take(w, "forward_steps", cfg.window.forward_steps);
    take(w, "shift_steps", cfg.window.shift_steps);
    take(w, "slide_steps", cfg.window.slide_steps);
    int step = static_cast<int>(cfg.window.step_seconds);
    take(w, "step_seconds", step);
    cfg.window.step_seconds = step;
  }
  if (root.contains("model")) {
    const auto& m = root["model"];
    check_keys(m, "model",
               {"in_features", "stem_channels", "encoder_channels", "n_rssab", "rssab_kernel",
                "attention_reduction", "final_out_channels"});
    take(m, "in_features", cfg.model.in_features);
    take(m, "stem_channels", cfg.model.stem_channels);
    take(m, "encoder_channels", cfg.model.encoder_channels);
    take(m, "n_rssab", cfg.model.n_rssab);
    if (m.contains("rssab_kernel")) {
      const auto k = m.at("rssab_kernel").get<std::vector<int>>();
      if (k.size() != 3) throw ConfigError("config: rssab_kernel needs 3 entries");
      cfg.model.rssab_kernel = {k[0], k[1], k[2]};
    }
    take(m, "attention_reduction", cfg.model.attention_reduction);
    take(m, "final_out_channels", cfg.model.final_out_channels);
  }
  if (root.contains("train")) {
    const auto& t = root["train"];
    check_keys(t, "train",
               {"batch_size", "learning_rate", "max_epochs", "early_stop_patience",
                "validation_fraction", "seed", "optimizer", "clip_norm"});
    take(t, "batch_size", cfg.train.batch_size);
    take(t, "learning_rate", cfg.train.learning_rate);
    take(t, "max_epochs", cfg.train.max_epochs);
    take(t, "early_stop_patience", cfg.train.early_stop_patience);
    take(t, "validation_fraction", cfg.train.validation_fraction);
    take(t, "seed", cfg.train.seed);
    take(t, "optimizer", cfg.train.optimizer);
    take(t, "clip_norm", cfg.train.clip_norm);
  }
  if (root.contains("strata")) {
    const auto& s = root["strata"];
    check_keys(s, "strata",
               {"utc_offset_minutes", "winter_months", "summer_months", "summer_day",
                "winter_day"});
    take(s, "utc_offset_minutes", cfg.strata.utc_offset_minutes);
    if (s.contains("winter_months")) {
      const auto v = s.at("winter_months").get<std::vector<int>>();
      cfg.strata.winter_months = std::set<int>(v.begin(), v.end());
    }
    if (s.contains("summer_months")) {
      const auto v = s.at("summer_months").get<std::vector<int>>();
      cfg.strata.summer_months = std::set<int>(v.begin(), v.end());
    }
    if (s.contains("summer_day")) {
      const auto v = s.at("summer_day").get<std::vector<std::string>>();
      if (v.size() != 2) throw ConfigError("config: summer_day needs [start, end]");
      cfg.strata.summer_day_start_min = parse_clock_minutes(v[0]);
      cfg.strata.summer_day_end_min = parse_clock_minutes(v[1]);
    }
    if (s.contains("winter_day")) {
      const auto v = s.at("winter_day").get<std::vector<std::string>>();
      if (v.size() != 2) throw ConfigError("config: winter_day needs [start, end]");
      cfg.strata.winter_day_start_min = parse_clock_minutes(v[0]);
      cfg.strata.winter_day_end_min = parse_clock_minutes(v[1]);
    }
  }
  if (root.contains("synth")) {
    const auto& s = root["synth"];
    check_keys(s, "synth",
               {"n_stations", "n_label_stations", "days", "start_time", "seed", "amplitude",
                "wavelength_deg", "diurnal_period_h", "dem_relief_m", "alpha", "noise_sd",
                "coarse_cell_deg", "coarse_margin_cells", "grid"});
    take(s, "n_stations", cfg.synth.n_stations);
    take(s, "n_label_stations", cfg.synth.n_label_stations);
    take(s, "days", cfg.synth.days);
    if (s.contains("start_time"))
      cfg.synth.start_time = timeutil::parse_iso8601(s.at("start_time").get<std::string>());
    take(s, "seed", cfg.synth.seed);
    take(s, "amplitude", cfg.synth.field.amplitude);
    take(s, "wavelength_deg", cfg.synth.field.wavelength_deg);
    take(s, "diurnal_period_h", cfg.synth.field.diurnal_period_h);
    take(s, "alpha", cfg.synth.alpha);
    take(s, "noise_sd", cfg.synth.noise_sd);
    take(s, "dem_relief_m", cfg.synth.field.dem_relief_m);
    take(s, "coarse_cell_deg", cfg.synth.coarse_cell_deg);
    take(s, "coarse_margin_cells", cfg.synth.coarse_margin_cells);
    if (s.contains("grid")) {
      const auto& g = s["grid"];
      check_keys(g, "synth.grid", {"lat_start", "lat_end", "lon_start", "lon_end", "cell_deg"});
      take(g, "lat_start", cfg.synth.grid.lat_start);
      take(g, "lat_end", cfg.synth.grid.lat_end);
      take(g, "lon_start", cfg.synth.grid.lon_start);
      take(g, "lon_end", cfg.synth.grid.lon_end);
      take(g, "cell_deg", cfg.synth.grid.cell_deg);
    }
  }
  if (root.contains("cube")) {
    const auto& c = root["cube"];
    check_keys(c, "cube", {"start", "end"});
    take(c, "start", cfg.cube.start);
    take(c, "end", cfg.cube.end);
  }
  if (root.contains("paths")) {
    const auto& p = root["paths"];
    check_keys(p, "paths",
               {"stations", "observations", "corrections", "coarse_u10f", "coarse_v10f",
                "coarse_msl", "dem", "truth", "cube", "checkpoint", "out_dir"});
    take(p, "stations", cfg.paths.stations);
    take(p, "observations", cfg.paths.observations);
    take(p, "corrections", cfg.paths.corrections);
    take(p, "coarse_u10f", cfg.paths.coarse_u10f);
    take(p, "coarse_v10f", cfg.paths.coarse_v10f);
    take(p, "coarse_msl", cfg.paths.coarse_msl);
    take(p, "dem", cfg.paths.dem);
    take(p, "truth", cfg.paths.truth);
    take(p, "cube", cfg.paths.cube);
    take(p, "checkpoint", cfg.paths.checkpoint);
    take(p, "out_dir", cfg.paths.out_dir);
  }
  return cfg;
}

std::string to_json_text(const RunConfig& cfg) {
  json root;
  root["grid"] = {{"lat_start", cfg.grid.lat_start},
                  {"lat_end", cfg.grid.lat_end},
                  {"lon_start", cfg.grid.lon_start},
                  {"lon_end", cfg.grid.lon_end},
                  {"cell_deg", cfg.grid.cell_deg}};
  root["window"] = {{"duration_steps", cfg.window.duration_steps},
                    {"forward_steps", cfg.window.forward_steps},
                    {"shift_steps", cfg.window.shift_steps},
                    {"slide_steps", cfg.window.slide_steps},
                    {"step_seconds", cfg.window.step_seconds}};
  root["model"] = abed::config_to_json(cfg.model);
  root["train"] = {{"batch_size", cfg.train.batch_size},
                   {"learning_rate", cfg.train.learning_rate},
                   {"max_epochs", cfg.train.max_epochs},
                   {"early_stop_patience", cfg.train.early_stop_patience},
                   {"validation_fraction", cfg.train.validation_fraction},
                   {"seed", cfg.train.seed},
                   {"optimizer", cfg.train.optimizer},
                   {"clip_norm", cfg.train.clip_norm}};
  root["strata"] = {
      {"utc_offset_minutes", cfg.strata.utc_offset_minutes},
      {"winter_months", std::vector<int>(cfg.strata.winter_months.begin(), cfg.strata.winter_months.end())},
      {"summer_months", std::vector<int>(cfg.strata.summer_months.begin(), cfg.strata.summer_months.end())},
      {"summer_day",
       {clock_string(cfg.strata.summer_day_start_min), clock_string(cfg.strata.summer_day_end_min)}},
      {"winter_day",
       {clock_string(cfg.strata.winter_day_start_min), clock_string(cfg.strata.winter_day_end_min)}}};
  root["synth"] = {{"n_stations", cfg.synth.n_stations},
                   {"n_label_stations", cfg.synth.n_label_stations},
                   {"days", cfg.synth.days},
                   {"start_time", timeutil::format_iso8601(cfg.synth.start_time)},
                   {"seed", cfg.synth.seed},
                   {"amplitude", cfg.synth.field.amplitude},
                   {"wavelength_deg", cfg.synth.field.wavelength_deg},
                   {"diurnal_period_h", cfg.synth.field.diurnal_period_h},
                   {"dem_relief_m", cfg.synth.field.dem_relief_m},
                   {"alpha", cfg.synth.alpha},
                   {"noise_sd", cfg.synth.noise_sd},
                   {"coarse_cell_deg", cfg.synth.coarse_cell_deg},
                   {"coarse_margin_cells", cfg.synth.coarse_margin_cells},
                   {"grid",
                    {{"lat_start", cfg.synth.grid.lat_start},
                     {"lat_end", cfg.synth.grid.lat_end},
                     {"lon_start", cfg.synth.grid.lon_start},
                     {"lon_end", cfg.synth.grid.lon_end},
                     {"cell_deg", cfg.synth.grid.cell_deg}}}};
  root["cube"] = {{"start", cfg.cube.start}, {"end", cfg.cube.end}};
  root["paths"] = {{"stations", cfg.paths.stations},
                   {"observations", cfg.paths.observations},
                   {"corrections", cfg.paths.corrections},
                   {"coarse_u10f", cfg.paths.coarse_u10f},
                   {"coarse_v10f", cfg.paths.coarse_v10f},
                   {"coarse_msl", cfg.paths.coarse_msl},
                   {"dem", cfg.paths.dem},
                   {"truth", cfg.paths.truth},
                   {"cube", cfg.paths.cube},
                   {"checkpoint", cfg.paths.checkpoint},
                   {"out_dir", cfg.paths.out_dir}};
  return root.dump(2) + "\n";
}

void echo(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  csvio::atomic_write_text(out_dir + "/effective_config.json", to_json_text(cfg));
}

}  // namespace windgrid::runconfig
