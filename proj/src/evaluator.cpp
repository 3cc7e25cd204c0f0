#include "windgrid/evaluator.hpp"

#include <algorithm>
#include <cmath>

#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/ingest.hpp"
#include "windgrid/timeutil.hpp"

namespace windgrid::evaluator {

void StrataConfig::validate() const {
  for (int m : winter_months)
    if (summer_months.count(m))
      throw ConfigError("strata: month " + std::to_string(m) + " in both seasons");
  auto window_ok = [](int lo, int hi) { return lo >= 0 && hi > lo && hi <= 24 * 60; };
  if (!window_ok(summer_day_start_min, summer_day_end_min) ||
      !window_ok(winter_day_start_min, winter_day_end_min))
    throw ConfigError("strata: day windows must fit within 24 hours");
}

const char* season_name(Season s) {
  switch (s) {
    case Season::Winter: return "winter";
    case Season::Summer: return "summer";
    default: return "other";
  }
}

const char* daypart_name(DayPart d) { return d == DayPart::Day ? "day" : "night"; }

namespace {

int local_month(std::int64_t t, const StrataConfig& cfg) {
  return timeutil::from_epoch(t + cfg.utc_offset_minutes * 60).month;
}

int local_minute_of_day(std::int64_t t, const StrataConfig& cfg) {
  const auto c = timeutil::from_epoch(t + cfg.utc_offset_minutes * 60);
  return c.hour * 60 + c.minute;
}

}  // namespace

Season season_of(std::int64_t t, const StrataConfig& cfg) {
  const int m = local_month(t, cfg);
  if (cfg.winter_months.count(m)) return Season::Winter;
  if (cfg.summer_months.count(m)) return Season::Summer;
  return Season::Other;
}

DayPart daypart_of(std::int64_t t, const StrataConfig& cfg) {
  const int m = local_month(t, cfg);
  const int minute = local_minute_of_day(t, cfg);
  // shoulder months: autumn (3..5) precedes winter and takes its window,
  // October precedes summer and takes that one
  bool winter_window;
  if (cfg.winter_months.count(m))
    winter_window = true;
  else if (cfg.summer_months.count(m))
    winter_window = false;
  else
    winter_window = m >= 3 && m <= 5;
  const int lo = winter_window ? cfg.winter_day_start_min : cfg.summer_day_start_min;
  const int hi = winter_window ? cfg.winter_day_end_min : cfg.summer_day_end_min;
  return minute >= lo && minute < hi ? DayPart::Day : DayPart::Night;
}

double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size())
    throw InputError("mae: inputs must be non-empty and equally sized");
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size())
    throw InputError("rmse: inputs must be non-empty and equally sized");
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

double correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InputError("correlation: need two equally sized series of length >= 2");
  auto constant = [](const std::vector<double>& v) {
    for (double e : v)
      if (e != v[0]) return false;
    return true;
  };
  if (constant(x) || constant(y))
    throw InputError("correlation: undefined for constant input");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    cov += dx * dy;
    vx += dx * dx;
    vy += dy * dy;
  }
  if (vx == 0 || vy == 0) throw InputError("correlation: undefined for constant input");
  return (cov / n) / std::sqrt((vx / n) * (vy / n));
}

DerivedQuantities derived_quantities(double u, double v) {
  DerivedQuantities d;
  d.speed = std::sqrt(u * u + v * v);
  if (d.speed > 0) {
    d.sin_dir = -u / d.speed;
    d.cos_dir = -v / d.speed;
    d.dir_valid = true;
  }
  return d;
}

namespace {

// accumulators sufficient for MAE, RMSE and the population correlation
struct BucketAcc {
  std::int64_t n = 0;
  double sum_abs = 0, sum_sq = 0;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;

  void add(double y, double p) {
    ++n;
    const double e = y - p;
    sum_abs += std::abs(e);
    sum_sq += e * e;
    sx += y;
    sy += p;
    sxx += y * y;
    syy += p * p;
    sxy += y * p;
  }
};

struct BucketKey {
  int quantity;  // 0..4
  int season;    // 0 all, 1 winter, 2 summer, 3 other
  int daypart;   // 0 all, 1 day, 2 night
  int horizon;   // 0 all, else minutes
  std::string station;  // "all" or id

  bool operator<(const BucketKey& o) const {
    if (quantity != o.quantity) return quantity < o.quantity;
    if (season != o.season) return season < o.season;
    if (daypart != o.daypart) return daypart < o.daypart;
    if (horizon != o.horizon) return horizon < o.horizon;
    return station < o.station;
  }
};

const char* kQuantities[5] = {"u", "v", "speed", "sin", "cos"};
const char* kSeasons[4] = {"all", "winter", "summer", "other"};
const char* kDayparts[3] = {"all", "day", "night"};

}  // namespace

std::vector<MetricRow> stratified_report(
    const std::map<std::string, std::vector<EvalPoint>>& points_by_source,
    const StrataConfig& cfg) {
  cfg.validate();
  std::vector<MetricRow> rows;
  for (const auto& [source, points] : points_by_source) {
    std::map<BucketKey, BucketAcc> buckets;
    for (const auto& pt : points) {
      if (pt.horizon_min <= 0)
        throw InputError("stratified_report: evaluation points must have positive horizons");
      const Season season = season_of(pt.time, cfg);
      const DayPart daypart = daypart_of(pt.time, cfg);
      const int season_idx = season == Season::Winter ? 1 : season == Season::Summer ? 2 : 3;
      const int daypart_idx = daypart == DayPart::Day ? 1 : 2;

      const DerivedQuantities dy = derived_quantities(pt.y_u, pt.y_v);
      const DerivedQuantities dp = derived_quantities(pt.p_u, pt.p_v);
      const bool dir_ok = dy.dir_valid && dp.dir_valid;
      const double yq[5] = {pt.y_u, pt.y_v, dy.speed, dy.sin_dir, dy.cos_dir};
      const double pq[5] = {pt.p_u, pt.p_v, dp.speed, dp.sin_dir, dp.cos_dir};

      for (int q = 0; q < 5; ++q) {
        if (q >= 3 && !dir_ok) continue;  // calm wind: direction undefined
        for (int s : {0, season_idx})
          for (int d : {0, daypart_idx})
            for (int hz : {0, pt.horizon_min}) {
              buckets[{q, s, d, hz, "all"}].add(yq[q], pq[q]);
              buckets[{q, s, d, hz, pt.station}].add(yq[q], pq[q]);
            }
      }
    }

    for (const auto& [key, acc] : buckets) {
      MetricRow base;
      base.quantity = kQuantities[key.quantity];
      base.season = kSeasons[key.season];
      base.daypart = kDayparts[key.daypart];
      base.horizon_min = key.horizon;
      base.station = key.station;
      base.source = source;
      base.count = acc.n;

      MetricRow m = base;
      m.metric = "MAE";
      m.value = acc.sum_abs / static_cast<double>(acc.n);
      rows.push_back(m);
      m.metric = "RMSE";
      m.value = std::sqrt(acc.sum_sq / static_cast<double>(acc.n));
      rows.push_back(m);
      if (acc.n >= 2) {
        const double n = static_cast<double>(acc.n);
        const double vx = acc.sxx / n - (acc.sx / n) * (acc.sx / n);
        const double vy = acc.syy / n - (acc.sy / n) * (acc.sy / n);
        const double cov = acc.sxy / n - (acc.sx / n) * (acc.sy / n);
        if (vx > 0 && vy > 0) {
          m.metric = "r";
          m.value = cov / std::sqrt(vx * vy);
          rows.push_back(m);
        }
      }
    }
  }
  return rows;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  csvio::Writer out(path, {"quantity", "metric", "season", "daypart", "horizon_min", "station",
                           "source", "value", "count"});
  for (const auto& r : rows)
    out.row({r.quantity, r.metric, r.season, r.daypart, std::to_string(r.horizon_min), r.station,
             r.source, csvio::fmt_double(r.value), std::to_string(r.count)});
  out.close();
}

std::vector<CorrMapRow> correlation_map(
    const std::vector<StationPrediction>& preds,
    const std::map<std::string, std::map<std::int64_t, Obs3m>>& obs3,
    const std::map<std::string, std::pair<double, double>>& station_coords,
    const std::vector<int>& horizons_min, std::int64_t min_points) {
  // (station, horizon) -> paired series
  struct Pair {
    std::vector<double> pu, u3, pv, v3;
  };
  std::map<std::pair<std::string, int>, Pair> series;
  for (const auto& p : preds) {
    if (std::find(horizons_min.begin(), horizons_min.end(), p.horizon_min) == horizons_min.end())
      continue;
    auto sit = obs3.find(p.station);
    if (sit == obs3.end()) continue;
    auto oit = sit->second.find(p.time);
    if (oit == sit->second.end()) continue;
    Pair& pair = series[{p.station, p.horizon_min}];
    pair.pu.push_back(p.p_u);
    pair.u3.push_back(oit->second.u3);
    pair.pv.push_back(p.p_v);
    pair.v3.push_back(oit->second.v3);
  }

  std::vector<CorrMapRow> rows;
  for (const auto& [key, pair] : series) {
    CorrMapRow row;
    row.station_id = key.first;
    row.horizon_min = key.second;
    auto cit = station_coords.find(key.first);
    if (cit != station_coords.end()) {
      row.lat = cit->second.first;
      row.lon = cit->second.second;
    }
    row.count = static_cast<std::int64_t>(pair.pu.size());
    if (row.count >= min_points) {
      try {
        row.r_u = correlation(pair.pu, pair.u3);
        row.r_v = correlation(pair.pv, pair.v3);
      } catch (const InputError&) {
        row.r_u.reset();  // constant series: skipped, count still reported
        row.r_v.reset();
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_corrmap_csv(const std::vector<CorrMapRow>& rows, const std::string& path) {
  csvio::Writer out(path, {"station_id", "lat", "lon", "horizon_min", "r_u", "r_v", "count"});
  for (const auto& r : rows)
    out.row({r.station_id, csvio::fmt_double(r.lat), csvio::fmt_double(r.lon),
             std::to_string(r.horizon_min), r.r_u ? csvio::fmt_double(*r.r_u) : "",
             r.r_v ? csvio::fmt_double(*r.r_v) : "", std::to_string(r.count)});
  out.close();
}

void export_area_forecast(const float* frame_uv, const geogrid::Grid& grid,
                          const std::vector<StationTruth>& truths, const std::string& cells_path,
                          const std::string& stations_path) {
  const std::size_t plane = static_cast<std::size_t>(grid.n_lat) * grid.n_lon;
  {
    csvio::Writer out(cells_path, {"lat", "lon", "u", "v", "speed", "dir"});
    for (int r = 0; r < grid.n_lat; ++r)
      for (int c = 0; c < grid.n_lon; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * grid.n_lon + c;
        const double u = frame_uv[k];
        const double v = frame_uv[plane + k];
        const ingest::SpeedDir sd = ingest::uv_to_wind(u, v);
        out.row({csvio::fmt_double(grid.lat_center(r)), csvio::fmt_double(grid.lon_center(c)),
                 csvio::fmt_double(u), csvio::fmt_double(v), csvio::fmt_double(sd.speed),
                 csvio::fmt_double(sd.dir)});
      }
    out.close();
  }
  {
    csvio::Writer out(stations_path, {"station_id", "lat", "lon", "u", "v", "speed", "dir"});
    for (const auto& s : truths) {
      const ingest::SpeedDir sd = ingest::uv_to_wind(s.u, s.v);
      out.row({s.station_id, csvio::fmt_double(s.lat), csvio::fmt_double(s.lon),
               csvio::fmt_double(s.u), csvio::fmt_double(s.v), csvio::fmt_double(sd.speed),
               csvio::fmt_double(sd.dir)});
    }
    out.close();
  }
}

}  // namespace windgrid::evaluator
