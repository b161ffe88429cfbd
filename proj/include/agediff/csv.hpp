#pragma once

#include <charconv>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agediff/model.hpp"

namespace agediff {

/// Shortest decimal form that round-trips the double bit-exactly.
inline std::string format_csv_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_csv_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw std::runtime_error("bad float field: " + s);
  return v;
}

struct CsvWriter {
  std::ofstream out;

  explicit CsvWriter(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
  }

  void header(const std::string& line) { out << line << "\n"; }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out << ',';
      out << format_csv_double(values[i]);
    }
    out << "\n";
  }

  void row_with_text(const std::vector<double>& values, const std::string& trailing) {
    for (double v : values) out << format_csv_double(v) << ',';
    out << trailing << "\n";
  }

  void matrix(const AgeSpaceField& u) {
    for (int j = 0; j < u.rows; ++j) {
      for (int i = 0; i < u.cols; ++i) {
        if (i) out << ',';
        out << format_csv_double(u(j, i));
      }
      out << "\n";
    }
  }
};

/// Splits one CSV line on commas (no quoting in these formats).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace agediff
