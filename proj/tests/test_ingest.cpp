#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "windgrid/csvio.hpp"
#include "windgrid/error.hpp"
#include "windgrid/ingest.hpp"
#include "windgrid/rng.hpp"
#include "windgrid/timeutil.hpp"

using namespace windgrid;
using namespace windgrid::ingest;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream out(path, std::ios::trunc);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("wind_to_uv: axis-aligned cases") {
  const UV north = wind_to_uv(10, 0);  // wind from the north blows southward
  CHECK(north.u == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(north.v == doctest::Approx(-10.0).epsilon(1e-12));
  const UV west = wind_to_uv(10, 270);  // wind from the west blows eastward
  CHECK(west.u == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(west.v == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("wind_to_uv: negative speed rejected") {
  CHECK_THROWS_AS(wind_to_uv(-1, 0), InputError);
}

TEST_CASE("uv_to_wind: calm and axis cases") {
  const SpeedDir calm = uv_to_wind(0, 0);
  CHECK(calm.speed == 0.0);
  CHECK(calm.dir == 0.0);
  const SpeedDir from_north = uv_to_wind(0, -10);
  CHECK(from_north.speed == doctest::Approx(10.0));
  CHECK(from_north.dir == doctest::Approx(0.0));
  const SpeedDir sd = uv_to_wind(3, 4);
  CHECK(sd.speed == doctest::Approx(5.0).epsilon(1e-12));
  double expect = std::atan2(-3.0, -4.0) * 180.0 / 3.14159265358979323846;
  if (expect < 0) expect += 360.0;
  CHECK(sd.dir == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("wind conversions round-trip within 1e-9") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(0.01, 80.0);
    const double d = rng.uniform(0.0, 360.0 - 1e-9);
    const UV uv = wind_to_uv(s, d);
    const SpeedDir back = uv_to_wind(uv.u, uv.v);
    CHECK(std::abs(back.speed - s) <= 1e-9);
    double diff = std::abs(back.dir - d);
    if (diff > 180) diff = 360 - diff;
    CHECK(diff <= 1e-9);
    // speed is invariant under direction changes
    const UV uv2 = wind_to_uv(s, std::fmod(d + 123.456, 360.0));
    CHECK(std::sqrt(uv2.u * uv2.u + uv2.v * uv2.v) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("time_features: phase anchors") {
  const auto midnight = time_features(timeutil::parse_iso8601("2022-05-11T00:00:00Z"));
  CHECK(midnight.sin_hour == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(midnight.cos_hour == doctest::Approx(1.0).epsilon(1e-12));
  const auto six = time_features(timeutil::parse_iso8601("2022-05-11T06:00:00Z"));
  CHECK(six.sin_hour == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(six.cos_hour) <= 1e-12);
  const auto jan1 = time_features(timeutil::parse_iso8601("2023-01-01T09:30:00Z"));
  CHECK(jan1.sin_month == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(jan1.cos_month == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(jan1.sin_doy == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(jan1.cos_doy == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("time_features: unit circle and periodicity") {
  Rng rng(23);
  for (int i = 0; i < 300; ++i) {
    const std::int64_t t =
        timeutil::parse_iso8601("2022-01-01T00:00:00Z") +
        static_cast<std::int64_t>(rng.uniform_index(2 * 365 * 96)) * 900;
    const TimeFeatures f = time_features(t);
    CHECK(f.sin_month * f.sin_month + f.cos_month * f.cos_month == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.sin_hour * f.sin_hour + f.cos_hour * f.cos_hour == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(f.sin_doy * f.sin_doy + f.cos_doy * f.cos_doy == doctest::Approx(1.0).epsilon(1e-12));
    const TimeFeatures g = time_features(t + 86400);  // +24 h: hour pair unchanged
    CHECK(g.sin_hour == doctest::Approx(f.sin_hour).epsilon(1e-9));
    CHECK(g.cos_hour == doctest::Approx(f.cos_hour).epsilon(1e-9));
  }
  // +12 months: month pair unchanged
  const TimeFeatures a = time_features(timeutil::parse_iso8601("2022-03-15T08:00:00Z"));
  const TimeFeatures b = time_features(timeutil::parse_iso8601("2023-03-15T08:00:00Z"));
  CHECK(a.sin_month == doctest::Approx(b.sin_month).epsilon(1e-12));
  CHECK(a.cos_month == doctest::Approx(b.cos_month).epsilon(1e-12));
}

namespace {

ObservationRecord make_obs(const std::string& id, const std::string& ts, double dir3,
                           double dir10) {
  ObservationRecord r;
  r.station_id = id;
  r.timestamp = timeutil::parse_iso8601(ts);
  r.temp_c = 20.0;
  r.humidity_pct = 50.0;
  r.wind3_speed = 10.0;
  r.wind3_dir = dir3;
  r.wind10_speed = 12.0;
  r.wind10_dir = dir10;
  return r;
}

std::vector<StationMeta> one_station_catalog() { return {{"PM", -34.4, 116.0, true}}; }

}  // namespace

TEST_CASE("apply_corrections: 90-degree clockwise rotation") {
  std::vector<ObservationRecord> recs = {make_obs("PM", "2022-06-01T00:00:00Z", 45.0, 100.0)};
  CorrectionRule rule;
  rule.station_id = "PM";
  rule.field = "wind3_dir";
  rule.rotation_deg = 90.0;
  rule.active_from = timeutil::parse_iso8601("2022-01-01T00:00:00Z");
  rule.active_to = timeutil::parse_iso8601("2023-01-01T00:00:00Z");
  ParseReport report;
  apply_corrections(recs, {rule}, one_station_catalog(), report);
  CHECK(*recs[0].wind3_dir == doctest::Approx(135.0));
  CHECK(*recs[0].wind10_dir == doctest::Approx(100.0));  // untouched field
  CHECK(report.warnings.empty());
}

TEST_CASE("apply_corrections: empty rule list is the identity") {
  std::vector<ObservationRecord> recs = {make_obs("PM", "2022-06-01T00:00:00Z", 45.0, 100.0)};
  const auto before = recs;
  ParseReport report;
  apply_corrections(recs, {}, one_station_catalog(), report);
  CHECK(*recs[0].wind3_dir == *before[0].wind3_dir);
  CHECK(*recs[0].wind10_dir == *before[0].wind10_dir);
}

TEST_CASE("apply_corrections: drop_labels nulls 10 m fields inside the range only") {
  std::vector<ObservationRecord> recs;
  for (int d = 1; d <= 9; ++d) {
    char ts[40];
    std::snprintf(ts, sizeof(ts), "2022-04-0%dT00:00:00Z", d);
    recs.push_back(make_obs("PM", ts, 45, 100));
  }
  CorrectionRule rule;
  rule.station_id = "PM";
  rule.drop_labels = true;
  rule.active_from = timeutil::parse_iso8601("2022-04-03T00:00:00Z");
  rule.active_to = timeutil::parse_iso8601("2022-04-07T00:00:00Z");
  ParseReport report;
  apply_corrections(recs, {rule}, one_station_catalog(), report);
  for (const auto& r : recs) {
    const bool inside = r.timestamp >= rule.active_from && r.timestamp < rule.active_to;
    CHECK(r.wind10_speed.has_value() == !inside);
    CHECK(r.wind10_dir.has_value() == !inside);
    CHECK(r.wind3_dir.has_value());  // 3 m data untouched
  }
}

TEST_CASE("apply_corrections: unknown station rule warns and is skipped") {
  std::vector<ObservationRecord> recs = {make_obs("PM", "2022-06-01T00:00:00Z", 45.0, 100.0)};
  CorrectionRule rule;
  rule.station_id = "NOPE";
  rule.field = "wind3_dir";
  rule.rotation_deg = 90;
  rule.active_from = 0;
  rule.active_to = 1;
  ParseReport report;
  apply_corrections(recs, {rule}, one_station_catalog(), report);
  REQUIRE(report.warnings.size() == 1);
  CHECK(*recs[0].wind3_dir == doctest::Approx(45.0));
}

TEST_CASE("parse_catalog: header-only file gives an empty list") {
  const std::string path = write_temp("wg_cat_empty.csv", "station_id,lat,lon,has_10m\n");
  ParseReport report;
  CHECK(parse_catalog(path, report).empty());
  CHECK(report.rejects.empty());
}

TEST_CASE("parse_catalog: missing column is a schema error") {
  const std::string path = write_temp("wg_cat_bad.csv", "station_id,lat,lon\nX,1,2\n");
  ParseReport report;
  CHECK_THROWS_AS(parse_catalog(path, report), FormatError);
}

TEST_CASE("parse_observations: dir 360 wraps to 0 with a warning") {
  const std::string path = write_temp(
      "wg_obs_wrap.csv",
      "station_id,timestamp,temp_c,humidity_pct,wind3_speed_kmh,wind3_dir_deg\n"
      "A,2022-01-01T00:00:00Z,15,40,5,360\n");
  ParseReport report;
  const auto recs = parse_observations(path, report);
  REQUIRE(recs.size() == 1);
  CHECK(*recs[0].wind3_dir == 0.0);
  CHECK(!recs[0].wind10_speed.has_value());
  CHECK(report.warnings.size() == 1);
}

TEST_CASE("parse_observations: one malformed row among 100 is rejected, the rest parse") {
  std::string content =
      "station_id,timestamp,temp_c,humidity_pct,wind3_speed_kmh,wind3_dir_deg,wind10_speed_kmh,wind10_dir_deg\n";
  for (int i = 0; i < 100; ++i) {
    char line[160];
    if (i == 37) {
      std::snprintf(line, sizeof(line), "A,2022-01-01T%02d:15:00Z,15,40,not_a_number,90,,\n", i % 24);
    } else {
      std::snprintf(line, sizeof(line), "A,2022-01-%02dT%02d:00:00Z,15,40,5,90,7,100\n",
                    1 + i / 24, i % 24);
    }
    content += line;
  }
  const std::string path = write_temp("wg_obs_reject.csv", content);
  ParseReport report;
  const auto recs = parse_observations(path, report);
  CHECK(recs.size() == 99);
  REQUIRE(report.rejects.size() == 1);
  CHECK(report.rejects[0].line_no == 39);  // header is line 1
}

TEST_CASE("parse_observations: empty trailing fields are absences") {
  const std::string path = write_temp(
      "wg_obs_absent.csv",
      "station_id,timestamp,temp_c,humidity_pct,wind3_speed_kmh,wind3_dir_deg,wind10_speed_kmh,wind10_dir_deg\n"
      "A,2022-01-01T00:00:00Z,,40,5,90,,\n");
  ParseReport report;
  const auto recs = parse_observations(path, report);
  REQUIRE(recs.size() == 1);
  CHECK(!recs[0].temp_c.has_value());
  CHECK(recs[0].humidity_pct.has_value());
  CHECK(!recs[0].wind10_speed.has_value());
}

TEST_CASE("parse_coarse: regular frames and a gap error") {
  const std::string good = write_temp("wg_coarse_ok.csv",
                                      "timestamp,lat,lon,u10f\n"
                                      "2022-01-01T00:00:00Z,1.0,10.0,1\n"
                                      "2022-01-01T00:00:00Z,1.0,10.25,2\n"
                                      "2022-01-01T00:00:00Z,0.75,10.0,3\n"
                                      "2022-01-01T00:00:00Z,0.75,10.25,4\n"
                                      "2022-01-01T01:00:00Z,1.0,10.0,5\n"
                                      "2022-01-01T01:00:00Z,1.0,10.25,6\n"
                                      "2022-01-01T01:00:00Z,0.75,10.0,7\n"
                                      "2022-01-01T01:00:00Z,0.75,10.25,8\n");
  ParseReport report;
  const CoarseSeries series = parse_coarse(good, report);
  CHECK(series.var == "u10f");
  CHECK(series.grid.n_lat == 2);
  CHECK(series.grid.n_lon == 2);
  REQUIRE(series.series.frames.size() == 2);
  CHECK(series.series.frames[0].at(0, 0) == 1.0);  // row 0 = north
  CHECK(series.series.frames[0].at(1, 1) == 4.0);

  const std::string gap = write_temp("wg_coarse_gap.csv",
                                     "timestamp,lat,lon,u10f\n"
                                     "2022-01-01T00:00:00Z,1.0,10.0,1\n"
                                     "2022-01-01T00:00:00Z,1.0,10.25,2\n"
                                     "2022-01-01T01:00:00Z,1.0,10.0,3\n"
                                     "2022-01-01T01:00:00Z,1.0,10.25,4\n"
                                     "2022-01-01T03:00:00Z,1.0,10.0,5\n"
                                     "2022-01-01T03:00:00Z,1.0,10.25,6\n");
  ParseReport report2;
  CHECK_THROWS_WITH_AS(parse_coarse(gap, report2), doctest::Contains("gap"), InputError);
}
