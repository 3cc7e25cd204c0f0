#include "windgrid/csvio.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "windgrid/error.hpp"

namespace windgrid::csvio {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.emplace_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

namespace {

std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

}  // namespace

Reader::Reader(const std::string& path) : path_(path), in_(path) {
  if (!in_) throw InputError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in_, line)) throw FormatError("'" + path + "' is empty (no header)");
  header_ = split_csv_line(strip_cr(line));
}

int Reader::column(const std::string& name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return static_cast<int>(i);
  return -1;
}

int Reader::require_column(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw FormatError("'" + path_ + "': missing required column '" + name + "'");
  return c;
}

bool Reader::next(Row& out) {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    line = strip_cr(line);
    if (line.empty()) continue;
    out.line_no = line_no_;
    out.fields = split_csv_line(line);
    return true;
  }
  return false;
}

Writer::Writer(const std::string& path, const std::vector<std::string>& header)
    : path_(path), tmp_path_(path + ".tmp"), out_(tmp_path_, std::ios::binary | std::ios::trunc) {
  if (!out_) throw InputError("cannot open '" + tmp_path_ + "' for writing");
  row(header);
}

Writer::~Writer() {
  if (!closed_) {
    // abandoned writer: drop the temp file, keep any previous output
    out_.close();
    std::remove(tmp_path_.c_str());
  }
}

void Writer::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << fields[i];
  }
  out_ << '\n';
}

void Writer::close() {
  out_.flush();
  if (!out_) throw InputError("write failed for '" + tmp_path_ + "'");
  out_.close();
  if (std::rename(tmp_path_.c_str(), path_.c_str()) != 0)
    throw InputError("cannot rename '" + tmp_path_ + "' to '" + path_ + "': " +
                     std::strerror(errno));
  closed_ = true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s.empty()) throw FormatError("empty numeric field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (errno != 0 || end == s.c_str() || *end != '\0' || !std::isfinite(v))
    throw FormatError("bad numeric value '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s) {
  if (s.empty()) throw FormatError("empty integer field");
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end == s.c_str() || *end != '\0')
    throw FormatError("bad integer value '" + s + "'");
  return v;
}

bool is_blank(const std::string& s) {
  for (char c : s)
    if (c != ' ' && c != '\t') return false;
  return true;
}

std::optional<double> parse_optional_double(const std::string& s) {
  if (is_blank(s)) return std::nullopt;
  return parse_double(s);
}

void atomic_write_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + tmp + "' for writing");
    out << content;
    out.flush();
    if (!out) throw InputError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw InputError("cannot rename '" + tmp + "' to '" + path + "': " + std::strerror(errno));
}

}  // namespace windgrid::csvio
