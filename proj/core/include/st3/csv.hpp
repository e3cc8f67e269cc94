#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "st3/common.hpp"

namespace st3::csv {

// Formats that survive a parse round-trip exactly.
std::string fmt_double(double v);
std::string fmt_float(float v);
std::string fmt_int(int64_t v);

std::string join_row(const std::vector<std::string>& fields);
std::vector<std::string> split_row(const std::string& line);

class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& fields);
  void flush();

 private:
  std::ofstream file_;
  size_t width_;
};

// All rows including the header; fails on missing file.
std::vector<std::vector<std::string>> read_rows(const std::string& path);

double parse_double(const std::string& s);
int64_t parse_int(const std::string& s);

}  // namespace st3::csv
