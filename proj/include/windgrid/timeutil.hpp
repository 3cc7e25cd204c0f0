#pragma once

#include <cstdint>
#include <string>

// UTC timestamps are carried as int64 seconds since the Unix epoch. All
// calendar math is proleptic Gregorian in UTC; no time zones, no leap seconds.
namespace windgrid::timeutil {

struct CivilDateTime {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31
  int hour = 0;
  int minute = 0;
  int second = 0;
};

bool is_leap_year(int year);
int days_in_month(int year, int month);
int day_of_year(int year, int month, int day);  // 1-based

std::int64_t days_from_civil(int year, int month, int day);
void civil_from_days(std::int64_t days, int& year, int& month, int& day);

std::int64_t to_epoch(const CivilDateTime& c);
CivilDateTime from_epoch(std::int64_t t);

// Accepts YYYY-MM-DDTHH:MM[:SS][Z]; throws FormatError otherwise.
std::int64_t parse_iso8601(const std::string& s);
std::string format_iso8601(std::int64_t t);

}  // namespace windgrid::timeutil
