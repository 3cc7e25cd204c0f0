#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <map>

#include "windgrid/csvio.hpp"
#include "windgrid/evaluator.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/timeutil.hpp"

using namespace windgrid;
using namespace windgrid::evaluator;

TEST_CASE("mae/rmse: literal cases and the scalar-loop oracle") {
  CHECK(mae({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(mae({1, 2, 3}, {2, 2, 5}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rmse({1, 2, 3}, {2, 2, 5}) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(50);
    std::vector<double> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(-100, 100);
      p[i] = rng.uniform(-100, 100);
    }
    double sum_abs = 0, sum_sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_abs += std::abs(y[i] - p[i]);
      sum_sq += (y[i] - p[i]) * (y[i] - p[i]);
    }
    CHECK(std::abs(mae(y, p) - sum_abs / static_cast<double>(n)) <= 1e-12);
    CHECK(std::abs(rmse(y, p) - std::sqrt(sum_sq / static_cast<double>(n))) <= 1e-12);
    CHECK(rmse(y, p) >= mae(y, p) - 1e-15);  // power-mean inequality
    // symmetric translation invariance
    std::vector<double> y2 = y, p2 = p;
    const double c = rng.uniform(-10, 10);
    for (std::size_t i = 0; i < n; ++i) {
      y2[i] += c;
      p2[i] += c;
    }
    CHECK(mae(y2, p2) == doctest::Approx(mae(y, p)).epsilon(1e-12));
    CHECK(rmse(y2, p2) == doctest::Approx(rmse(y, p)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(mae({}, {}), InputError);
}

TEST_CASE("correlation: self, anti and affine invariance within 1e-12") {
  Rng rng(2);
  std::vector<double> x(200), y(200);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(-5, 5);
    y[i] = rng.uniform(-5, 5);
  }
  std::vector<double> neg = x;
  for (auto& v : neg) v = -v;
  CHECK(std::abs(correlation(x, x) - 1.0) <= 1e-12);
  CHECK(std::abs(correlation(x, neg) + 1.0) <= 1e-12);

  std::vector<double> ax = x;
  for (auto& v : ax) v = 3.7 * v + 11.0;
  CHECK(std::abs(correlation(ax, y) - correlation(x, y)) <= 1e-12);

  std::vector<double> constant(200, 4.2);
  CHECK_THROWS_AS(correlation(constant, y), InputError);
}

TEST_CASE("derived_quantities: axis case, 3-4-5 and the calm flag") {
  const auto d = derived_quantities(0, -10);
  CHECK(d.speed == doctest::Approx(10.0));
  CHECK(d.sin_dir == doctest::Approx(0.0));
  CHECK(d.cos_dir == doctest::Approx(1.0));
  CHECK(d.dir_valid);
  CHECK(derived_quantities(3, 4).speed == doctest::Approx(5.0));
  CHECK(!derived_quantities(0, 0).dir_valid);
}

TEST_CASE("season and day-part follow the paper clock windows at UTC+8") {
  const StrataConfig cfg;
  const std::int64_t winter_noon = timeutil::parse_iso8601("2022-07-15T04:00:00Z");  // 12:00 +08
  CHECK(season_of(winter_noon, cfg) == Season::Winter);
  CHECK(daypart_of(winter_noon, cfg) == DayPart::Day);

  const std::int64_t summer_night = timeutil::parse_iso8601("2022-01-15T20:00:00Z");  // 04:00 +08
  CHECK(season_of(summer_night, cfg) == Season::Summer);
  CHECK(daypart_of(summer_night, cfg) == DayPart::Night);

  // half-open boundaries of the winter window
  CHECK(daypart_of(timeutil::parse_iso8601("2022-06-20T23:15:00Z"), cfg) == DayPart::Day);
  CHECK(daypart_of(timeutil::parse_iso8601("2022-06-20T23:14:00Z"), cfg) == DayPart::Night);
  CHECK(daypart_of(timeutil::parse_iso8601("2022-06-21T09:30:00Z"), cfg) == DayPart::Night);
  CHECK(daypart_of(timeutil::parse_iso8601("2022-06-21T09:29:00Z"), cfg) == DayPart::Day);

  // shoulder months land in the Other season
  CHECK(season_of(timeutil::parse_iso8601("2022-04-10T04:00:00Z"), cfg) == Season::Other);
}

namespace {

std::vector<EvalPoint> scattered_points(int n, double err, Rng& rng) {
  std::vector<EvalPoint> pts;
  const std::int64_t start = timeutil::parse_iso8601("2022-01-01T00:00:00Z");
  for (int i = 0; i < n; ++i) {
    EvalPoint p;
    p.station = i % 3 == 0 ? "A" : "B";
    p.time = start + static_cast<std::int64_t>(rng.uniform_index(365 * 96)) * 900;
    p.horizon_min = 15 * (1 + static_cast<int>(rng.uniform_index(32)));
    p.y_u = rng.uniform(-10, 10);
    p.y_v = rng.uniform(-10, 10);
    p.p_u = p.y_u + err * rng.uniform(-1, 1);
    p.p_v = p.y_v + err * rng.uniform(-1, 1);
    pts.push_back(p);
  }
  return pts;
}

std::int64_t row_count(const std::vector<MetricRow>& rows, const std::string& quantity,
                       const std::string& metric, const std::string& season,
                       const std::string& daypart, int horizon, const std::string& station) {
  for (const auto& r : rows)
    if (r.quantity == quantity && r.metric == metric && r.season == season &&
        r.daypart == daypart && r.horizon_min == horizon && r.station == station)
      return r.count;
  return -1;
}

}  // namespace

TEST_CASE("stratified_report: season x day-part cells partition the points exactly") {
  Rng rng(3);
  const StrataConfig cfg;
  std::map<std::string, std::vector<EvalPoint>> by_source;
  by_source["model"] = scattered_points(4000, 1.0, rng);
  const auto rows = stratified_report(by_source, cfg);

  const std::int64_t all = row_count(rows, "u", "MAE", "all", "all", 0, "all");
  CHECK(all == 4000);
  std::int64_t cells = 0;
  for (const char* season : {"winter", "summer", "other"})
    for (const char* daypart : {"day", "night"}) {
      const std::int64_t c = row_count(rows, "u", "MAE", season, daypart, 0, "all");
      if (c > 0) cells += c;
    }
  CHECK(cells == all);

  // station counts reconcile too
  const std::int64_t a = row_count(rows, "u", "MAE", "all", "all", 0, "A");
  const std::int64_t b = row_count(rows, "u", "MAE", "all", "all", 0, "B");
  CHECK(a + b == all);

  // horizon buckets partition as well
  std::int64_t hsum = 0;
  for (int h = 15; h <= 480; h += 15) {
    const std::int64_t c = row_count(rows, "u", "MAE", "all", "all", h, "all");
    if (c > 0) hsum += c;
  }
  CHECK(hsum == all);

  // no row may carry a zero or negative count, and all values are finite
  for (const auto& r : rows) {
    CHECK(r.count > 0);
    CHECK(std::isfinite(r.value));
  }
}

TEST_CASE("stratified_report: a perfect model gives zero errors and unit correlations") {
  Rng rng(4);
  std::map<std::string, std::vector<EvalPoint>> by_source;
  by_source["model"] = scattered_points(500, 0.0, rng);
  const auto rows = stratified_report(by_source, StrataConfig{});
  for (const auto& r : rows) {
    if (r.metric == "MAE" || r.metric == "RMSE") CHECK(r.value <= 1e-12);
    if (r.metric == "r") CHECK(r.value == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("stratified_report: rejects non-positive horizons") {
  std::map<std::string, std::vector<EvalPoint>> by_source;
  EvalPoint p;
  p.horizon_min = 0;
  by_source["model"] = {p};
  CHECK_THROWS_AS(stratified_report(by_source, StrataConfig{}), InputError);
}

TEST_CASE("correlation_map: linear coupling gives r=1, noise decorrelates, degenerates skip") {
  Rng rng(5);
  const std::int64_t start = timeutil::parse_iso8601("2022-01-01T00:00:00Z");
  std::map<std::string, std::map<std::int64_t, Obs3m>> obs3;
  std::vector<StationPrediction> preds;
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t t = start + static_cast<std::int64_t>(i) * 900;
    const double u3 = 8.0 * std::sin(0.01 * i) + rng.uniform(-1, 1);
    const double v3 = 8.0 * std::cos(0.013 * i) + rng.uniform(-1, 1);
    obs3["A"][t] = {u3, v3};
    obs3["CONST"][t] = {1.0, 1.0};
    for (int h : {30, 120, 240, 480}) {
      preds.push_back({"A", t, h, 1.2 * u3, 1.2 * v3});
      preds.push_back({"CONST", t, h, rng.uniform(-1, 1), rng.uniform(-1, 1)});
      preds.push_back({"NOISE", t, h, rng.normal(), rng.normal()});
    }
    obs3["NOISE"][t] = {rng.normal(), rng.normal()};
  }
  std::map<std::string, std::pair<double, double>> coords{
      {"A", {-33.0, 116.0}}, {"CONST", {-33.1, 116.1}}, {"NOISE", {-33.2, 116.2}}};
  const auto rows = correlation_map(preds, obs3, coords, {30, 120, 240, 480});
  int seen_a = 0, seen_const = 0, seen_noise = 0;
  for (const auto& r : rows) {
    if (r.station_id == "A") {
      ++seen_a;
      REQUIRE(r.r_u.has_value());
      CHECK(*r.r_u == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(*r.r_v == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(r.lat == -33.0);
    }
    if (r.station_id == "CONST") {
      ++seen_const;
      CHECK(!r.r_u.has_value());  // constant 3 m series: undefined correlation
      CHECK(r.count == 1000);
    }
    if (r.station_id == "NOISE") {
      ++seen_noise;
      REQUIRE(r.r_u.has_value());
      CHECK(std::abs(*r.r_u) <= 0.1);  // statistical null bound at 1000 points
      CHECK(std::abs(*r.r_v) <= 0.1);
    }
  }
  CHECK(seen_a == 4);
  CHECK(seen_const == 4);
  CHECK(seen_noise == 4);
}

TEST_CASE("correlation_map: stations under the overlap threshold are skipped with their count") {
  const std::int64_t start = timeutil::parse_iso8601("2022-01-01T00:00:00Z");
  std::map<std::string, std::map<std::int64_t, Obs3m>> obs3;
  std::vector<StationPrediction> preds;
  for (int i = 0; i < 50; ++i) {
    const std::int64_t t = start + static_cast<std::int64_t>(i) * 900;
    obs3["A"][t] = {static_cast<double>(i), static_cast<double>(-i)};
    preds.push_back({"A", t, 30, static_cast<double>(i), static_cast<double>(-i)});
  }
  const auto rows = correlation_map(preds, obs3, {{"A", {0, 0}}}, {30});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].count == 50);
  CHECK(!rows[0].r_u.has_value());
}

TEST_CASE("export_area_forecast: single-cell grid, definitional speed, 9-digit parse-back") {
  const geogrid::Grid grid = geogrid::make_grid({0.0, -0.1, 0.0, 0.1, 0.1});
  float frame[2] = {3.0f, 4.0f};
  const std::string cells =
      (std::filesystem::temp_directory_path() / "wg_area_cells.csv").string();
  const std::string stations =
      (std::filesystem::temp_directory_path() / "wg_area_st.csv").string();
  export_area_forecast(frame, grid, {{"S", -0.05, 0.05, 1.25, -2.5}}, cells, stations);

  csvio::Reader in(cells);
  csvio::Row row;
  REQUIRE(in.next(row));
  CHECK(row.fields.size() == 6);
  const double u = csvio::parse_double(row.fields[2]);
  const double v = csvio::parse_double(row.fields[3]);
  const double speed = csvio::parse_double(row.fields[4]);
  CHECK(u == doctest::Approx(3.0));
  CHECK(v == doctest::Approx(4.0));
  CHECK(speed == doctest::Approx(std::sqrt(u * u + v * v)).epsilon(1e-9));
  CHECK(!in.next(row));  // exactly one cell row

  csvio::Reader sin_(stations);
  REQUIRE(sin_.next(row));
  CHECK(row.fields[0] == "S");
  CHECK(csvio::parse_double(row.fields[3]) == doctest::Approx(1.25).epsilon(1e-9));
  std::filesystem::remove(cells);
  std::filesystem::remove(stations);
}
