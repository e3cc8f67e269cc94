#include "st3/csv.hpp"

#include <cstdio>
#include <cstdlib>

namespace st3::csv {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

std::string fmt_int(int64_t v) { return std::to_string(v); }

std::string join_row(const std::vector<std::string>& fields) {
  std::string out;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

Writer::Writer(const std::string& path, const std::vector<std::string>& header)
    : file_(path), width_(header.size()) {
  if (!file_) fail(ErrorKind::kIo, "cannot write " + path);
  file_ << join_row(header) << "\n";
}

void Writer::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_)
    fail(ErrorKind::kInvalidArgument, "csv row width mismatch");
  file_ << join_row(fields) << "\n";
}

void Writer::flush() { file_.flush(); }

std::vector<std::vector<std::string>> read_rows(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot read " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    rows.push_back(split_row(line));
  }
  return rows;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str())
    fail(ErrorKind::kInvalidArgument, "not a number: " + s);
  return v;
}

int64_t parse_int(const std::string& s) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str())
    fail(ErrorKind::kInvalidArgument, "not an integer: " + s);
  return static_cast<int64_t>(v);
}

}  // namespace st3::csv
