#pragma once

#include <string>
#include <vector>

// Observational study data: one row per unit with a string id, a binary
// group flag z (1 = treated, 0 = control), an observed outcome y, and a
// fixed-length covariate vector x.

namespace balmatch {

inline constexpr const char* kVersion = "0.1.0";

struct Unit {
  std::string id;
  int z = 0;
  double y = 0.0;
  std::vector<double> x;
};

struct Dataset {
  std::vector<Unit> units;
  int dim = 0;  // covariate dimension d

  std::size_t n() const { return units.size(); }
  std::vector<int> rows_with_z(int z) const;
  std::size_t count_z(int z) const;
};

// Throws std::invalid_argument on duplicate ids, non-binary z, non-finite
// numeric fields, or inconsistent covariate lengths.
void validate_dataset(const Dataset& ds);

// CSV with exact header id,z,y,x1,...,xd. Errors carry 1-based row numbers.
Dataset load_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);

struct Summary {
  std::size_t n = 0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  std::vector<double> treated_mean;   // per covariate
  std::vector<double> control_mean;   // per covariate
  std::vector<double> mean_diff;      // treated minus control
};

// Requires at least one unit in each group.
Summary summarize(const Dataset& ds);

// Locale-independent shortest-round-trip-stable formatting used by all CSV
// and JSON writers so that reruns are byte-identical.
std::string format_double(double v);

}  // namespace balmatch
