#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/solver.hpp"

// Existence diagnostics. A grid of axis-aligned boxes is laid around the
// treated-group mean of the basis columns, offset by 1.5 * delta_k in every
// combination of directions; rho is the smallest control-group hit
// probability across the grid. When every box has positive mass, a
// pigeonhole argument gives a finite sample size at which a feasible match
// exists with high probability.

namespace balmatch {

struct RhoOptions {
  // Box side lengths per column; empty selects the default of delta_k.
  std::vector<double> box_side;
  // When 3^K exceeds the budget, a seeded uniform sample of boxes is used.
  long box_budget = 200000;
  std::uint64_t seed = 0;
};

struct RhoReport {
  double rho = 0.0;
  double se = 0.0;           // binomial standard error at the minimum box
  bool vacuous = false;      // some box has zero control mass
  long boxes_total = 0;      // 3^K
  long boxes_evaluated = 0;
  bool sampled = false;      // grid was subsampled
  std::vector<double> treated_mean;   // conditioning point
  std::vector<double> argmin_center;  // center of the minimizing box
  long n_controls = 0;
};

RhoReport rho_boxes(const BasisMatrix& bm, const std::vector<int>& z,
                    const BalanceSpec& spec, const RhoOptions& opt = {});

// Smallest n with (1-rho)^n below delta0 * 2^{-K}; no finite bound exists
// when rho is 0 or 1 (nullopt). Throws outside [0,1] / (0,1) domains.
std::optional<long> sample_size_bound(double rho, double delta0, int k);

struct OverlapReport {
  double c3 = 0.0;        // min_i min(pi_i, 1 - pi_i)
  double threshold = 0.0; // c_const / (log K + n * K^{-r_pi})
  bool pass = false;
  double c_const = 1.0;
  double r_pi = 2.0;
};

// pi entries must lie strictly inside (0,1). c_const = 0 degenerates the
// check to overlap-positivity only (threshold 0, always passes).
OverlapReport overlap_report(const std::vector<double>& pi, int k, long n,
                             double r_pi = 2.0, double c_const = 1.0);

}  // namespace balmatch
