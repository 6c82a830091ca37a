#ifndef PED_CSV_HPP
#define PED_CSV_HPP

// Matrix CSV: row-major, optional `rows,cols` header line (always written).

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ped/numkernel.hpp"

namespace ped::num {

/// Shortest round-trippable decimal form of a double.
inline std::string format_double(double x) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline void write_matrix_csv(std::ostream& os, const Eigen::Ref<const Matrix>& m) {
  os << m.rows() << ',' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline void write_matrix_csv(const std::string& path, const Eigen::Ref<const Matrix>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_matrix_csv(os, m);
  if (!os) throw IoError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    std::string_view f = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    out.emplace_back(f);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && errno != ERANGE;
}

inline bool parse_count(const std::string& s, long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtol(s.c_str(), &end, 10);
  return end == s.c_str() + s.size() && out >= 0;
}

} // namespace detail

inline Matrix read_matrix_csv(std::istream& is, const std::string& origin = "<stream>") {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(detail::split_fields(line));
  }
  std::size_t first = 0;
  long hr = -1, hc = -1;
  if (!rows.empty() && rows[0].size() == 2 && detail::parse_count(rows[0][0], hr) &&
      detail::parse_count(rows[0][1], hc) && static_cast<long>(rows.size()) - 1 == hr &&
      (hr == 0 || static_cast<long>(rows[1].size()) == hc)) {
    first = 1;
  }
  const std::size_t nrows = rows.size() - first;
  const std::size_t ncols = nrows ? rows[first].size() : (first ? static_cast<std::size_t>(hc) : 0);
  Matrix m(static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(ncols));
  for (std::size_t i = 0; i < nrows; ++i) {
    const auto& r = rows[first + i];
    if (r.size() != ncols)
      throw ValidationError(origin + ": line " + std::to_string(first + i + 1) + " has " +
                            std::to_string(r.size()) + " fields, expected " + std::to_string(ncols));
    for (std::size_t j = 0; j < ncols; ++j) {
      double v;
      if (!detail::parse_double(r[j], v) || !std::isfinite(v))
        throw ValidationError(origin + ": line " + std::to_string(first + i + 1) +
                              " field " + std::to_string(j + 1) + " is not a finite number");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return m;
}

inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_matrix_csv(is, path);
}

} // namespace ped::num

#endif // PED_CSV_HPP
