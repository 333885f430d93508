#pragma once

#include <vector>

#include <Eigen/Dense>

// Dense phase-1 simplex for box-constrained linear feasibility:
// find x with A x = b and 0 <= x <= upper (upper entries may be +inf).
// Small row counts and possibly many columns, which matches the balance
// constraint systems solved here (a handful of moment rows, one column per
// candidate target unit).

namespace balmatch {

struct LpProblem {
  Eigen::MatrixXd a;      // m x n
  Eigen::VectorXd b;      // m
  Eigen::VectorXd upper;  // n, entry may be +infinity
  // Crash start: variables (with finite upper) to place at their upper
  // bound initially; a good guess cuts the iteration count sharply.
  std::vector<int> start_at_upper;
};

enum class LpStatus { feasible, infeasible, stalled };

struct LpResult {
  LpStatus status = LpStatus::stalled;
  Eigen::VectorXd x;            // best point found (valid when feasible)
  double infeasibility = 0.0;   // remaining artificial mass at exit
  int iterations = 0;
};

// Bounded-variable simplex with an artificial-variable phase 1. Pricing is
// Dantzig's rule with an automatic switch to Bland's rule after a stall, so
// runs terminate and are deterministic. max_iters <= 0 selects an automatic
// cap.
LpResult lp_find_feasible(const LpProblem& p, int max_iters = 0);

}  // namespace balmatch
