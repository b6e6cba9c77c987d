#pragma once

#include <string>
#include <vector>

namespace rflab {

// Shortest round-trip decimal form of a float64. Every number that lands in a
// CSV or JSON artifact goes through this, which is what makes repeated runs
// byte-identical.
std::string fmt_double(double x);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
};

CsvTable read_csv(const std::string& path);

}  // namespace rflab
