#pragma once

// Shared error types and small utilities used across the library.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rbm {

// Malformed input file: message carries the offending field/line.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input that breaks a model invariant. Collects every
// failure so the user can fix them in one pass.
struct ValidationError : std::runtime_error {
  std::vector<std::string> issues;
  explicit ValidationError(std::vector<std::string> list)
      : std::runtime_error(join(list)), issues(std::move(list)) {}
  static std::string join(const std::vector<std::string>& list) {
    std::ostringstream os;
    os << list.size() << " validation issue(s):";
    for (const auto& s : list) os << "\n  - " << s;
    return os.str();
  }
};

struct ValidationReport {
  std::vector<std::string> issues;
  bool ok() const { return issues.empty(); }
  void add(std::string msg) { issues.push_back(std::move(msg)); }
};

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << text;
}

// Fixed 6-significant-digit formatting for emitted tables and CSV.
inline std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) v = 0.0;  // fold negative zero
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Round a value to 6 significant digits (stable JSON output).
inline double round6(double v) {
  if (!std::isfinite(v)) return v;
  if (v == 0.0) return 0.0;  // fold negative zero
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::strtod(buf, nullptr);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace rbm
