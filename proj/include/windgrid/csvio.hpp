#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace windgrid::csvio {

struct Row {
  std::size_t line_no = 0;  // 1-based, header is line 1
  std::vector<std::string> fields;
};

// Minimal comma-separated reader: header on line 1, no quoting (none of the
// project schemas need it), CRLF tolerated, blank lines skipped.
class Reader {
 public:
  explicit Reader(const std::string& path);

  const std::vector<std::string>& header() const { return header_; }
  const std::string& path() const { return path_; }

  // column index or -1
  int column(const std::string& name) const;
  // throws FormatError naming the file and the missing column
  int require_column(const std::string& name) const;

  bool next(Row& out);

 private:
  std::string path_;
  std::ifstream in_;
  std::vector<std::string> header_;
  std::size_t line_no_ = 1;
};

// Streams rows to <path>.tmp and renames on close, so partially written
// outputs never shadow a previous good file.
class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header);
  ~Writer();

  void row(const std::vector<std::string>& fields);
  void close();

 private:
  std::string path_;
  std::string tmp_path_;
  std::ofstream out_;
  bool closed_ = false;
};

std::vector<std::string> split_csv_line(const std::string& line);

// shortest representation that round-trips to 9 significant digits
std::string fmt_double(double v);

double parse_double(const std::string& s);  // throws FormatError
std::int64_t parse_int(const std::string& s);
bool is_blank(const std::string& s);

std::optional<double> parse_optional_double(const std::string& s);

void atomic_write_text(const std::string& path, const std::string& content);

}  // namespace windgrid::csvio
