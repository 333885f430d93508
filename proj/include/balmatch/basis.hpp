#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "balmatch/dataset.hpp"

// Covariate feature expansions B(X). Balance is enforced on the columns of
// the expanded matrix, so the choice of expansion decides which functions of
// X are (approximately) mean-balanced between the groups.

namespace balmatch {

enum class BasisKind { raw, polynomial, spline, interactions };

struct BasisSpec {
  BasisKind kind = BasisKind::raw;
  int degree = 1;                // polynomial degree
  std::vector<double> knots;     // spline hinge knots, applied per dimension
  int order = 2;                 // maximum interaction order
  bool include_intercept = false;

  static BasisSpec parse(const std::string& text);  // e.g. "poly:2", "raw+int"
  std::string to_string() const;
};

struct BasisMatrix {
  Eigen::MatrixXd values;                 // n x K
  BasisSpec spec;
  std::vector<std::string> column_names;  // size K
  std::vector<std::string> warnings;      // e.g. K exceeds n

  std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
  int k() const { return static_cast<int>(values.cols()); }
};

// Pure function of (ds, spec); same inputs give a bit-identical matrix.
// Throws on empty data, non-positive degree/order, or unsorted knots.
BasisMatrix expand(const Dataset& ds, const BasisSpec& spec);

struct RegularityReport {
  double sup_row_norm = 0.0;      // max_i ||B(x_i)||_2
  double operator_norm = 0.0;     // largest eigenvalue of (1/n) B'B
  double min_eigenvalue = 0.0;    // smallest eigenvalue of (1/n) B'B
  bool degenerate = false;        // min eigenvalue below tolerance
  bool k_exceeds_root_n = false;  // K grows too fast relative to n
  bool k_exceeds_n = false;
};

RegularityReport check_regularity(const BasisMatrix& bm);

}  // namespace balmatch
