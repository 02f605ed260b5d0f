#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nsgmm/dataset.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

/// Shortest round-trip text for a double (fixed across runs and platforms
/// with IEEE doubles, which is what byte-identical outputs need).
inline std::string fmt(double v) {
  char buf[32];
  for (int digits = 15; digits < 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// A comma-separated table with a header row. Lines starting with '#' carry
/// metadata as `key=value` pairs separated by spaces.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::map<std::string, std::string> meta;

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    return -1;
  }
  int require(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw Error("missing column '" + name + "'");
    return c;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(std::istream& in, const std::string& what = "input") {
  CsvTable t;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq != std::string::npos) t.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      continue;
    }
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error(what + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                  " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw Error(what + ": empty file");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_csv(in, path);
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(what + ": not a number: '" + s + "'");
  }
}

inline long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(what + ": not an integer: '" + s + "'");
  }
}

inline std::string meta_line(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string s = "#";
  for (const auto& [k, v] : kv) s += " " + k + "=" + v;
  return s + "\n";
}

// ---------------------------------------------------------------------------
// Dataset CSV: header y,D,W (IVQR) or y[,x1..x5] (location).

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const auto names = data.column_names();
  const Matrix table = data.table();
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << "\n";
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) out << (j ? "," : "") << fmt(table(i, j));
    out << "\n";
  }
}

inline Dataset read_dataset_csv(const std::string& path, bool ivqr) {
  const CsvTable t = read_csv_file(path);
  if (t.rows.empty()) throw Error(path + ": no observations");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  auto column = [&](const std::string& name) {
    const int c = t.require(name);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = parse_double(t.rows[i][c], path + ": column " + name);
    return v;
  };
  const std::vector<std::string> expected =
      ivqr ? std::vector<std::string>{"y", "D", "W"}
           : (t.header.size() == 1 ? std::vector<std::string>{"y"}
                                   : std::vector<std::string>{"y", "x1", "x2", "x3", "x4", "x5"});
  if (t.header != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw Error(path + ": header must be " + want);
  }
  if (ivqr) return Dataset::ivqr(column("y"), column("D"), column("W"));
  if (t.header.size() == 1) return Dataset::location(column("y"));
  Matrix x(n, 5);
  for (int j = 0; j < 5; ++j) x.col(j) = column("x" + std::to_string(j + 1));
  return Dataset::location(column("y"), std::move(x));
}

}  // namespace nsgmm
