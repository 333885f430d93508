#pragma once

#include <optional>
#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"
#include "balmatch/dgp.hpp"
#include "balmatch/solver.hpp"
#include "balmatch/weights.hpp"

// Effect estimation from matched samples: each unit is contrasted with the
// average outcome of its matches, and the per-unit contrasts are averaged.
// The same number is obtained as a weighted outcome difference with the
// matched-count weights. A plug-in variance comes from the estimated
// influence function with regression-adjusted outcome surfaces.

namespace balmatch {

// Two-sided normal quantile for 95% intervals.
inline constexpr double kZ975 = 1.959963984540054;

struct EstimateResult {
  std::string estimand;  // "ate" or "att"
  double point = 0.0;
  std::optional<double> variance;          // root-n scale
  std::optional<double> variance_per_obs;  // variance / n
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
  double ci_level = 0.95;
  std::size_t n = 0;
  bool ridge_fallback = false;
  std::string caveat;  // nonempty when variance is not reported
};

// Average contrast over all units; each treated unit contributes
// y_i - mean(matched control y), each control mean(matched treated y) - y_i.
double ate_matched(const Dataset& ds, const MatchSolution& sol_tc,
                   const MatchSolution& sol_ct);

// Same estimand evaluated as sum_i sign(z_i) w_i y_i with estimator-form
// weights; algebraically identical to ate_matched.
double ate_weighted(const Dataset& ds, const ImpliedWeights& w);

// Treated-only contrast from the treated-into-controls solution.
double att_matched(const Dataset& ds, const MatchSolution& sol_tc);

struct VariancePlugin {
  double variance = 0.0;            // root-n scale
  bool ridge_fallback = false;      // regression needed ridge (penalty 1e-8)
  std::vector<double> influence;    // estimated influence values, size n
};

// Influence-function plug-in: per-group least squares of the outcome on the
// basis columns (an intercept column is added when the basis lacks a
// constant column) gives fitted surfaces; the matched-count weights play the
// role of inverse assignment probabilities.
VariancePlugin variance_plugin(const Dataset& ds, const BasisMatrix& bm,
                               const MatchSolution& sol_tc,
                               const MatchSolution& sol_ct);

EstimateResult estimate_ate(const Dataset& ds, const BasisMatrix& bm,
                            const MatchSolution& sol_tc,
                            const MatchSolution& sol_ct, double level = 0.95);

// Point estimate only; the plug-in variance targets the whole-population
// contrast and is deliberately not reported for the treated-only estimand.
EstimateResult estimate_att(const Dataset& ds, const MatchSolution& sol_tc);

struct EfficiencyBound {
  double value = 0.0;
  double se = 0.0;  // Monte Carlo standard error
  long draws = 0;
};

// Monte Carlo evaluation of the semiparametric variance floor
//   E[ var1(X)/pi(X) + var0(X)/(1-pi(X)) + (effect(X) - ate)^2 ]
// for a generator with known surfaces.
EfficiencyBound oracle_efficiency_bound(const DGPSpec& dgp, long draws,
                                        std::uint64_t seed);

// Two-sided normal quantile used for intervals at arbitrary levels.
double normal_quantile_two_sided(double level);

}  // namespace balmatch
