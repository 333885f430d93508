#pragma once

#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"
#include "balmatch/solver.hpp"

// Matched-count weights. A unit that is matched cnt times in the direction
// where its group is the target side carries raw weight cnt / m, and the
// group-contrast estimator weight (1 + cnt / m) / n. Units with identical
// (z, x) are exchangeable, so their weights are averaged by default; this
// leaves every weighted group mean unchanged.

namespace balmatch {

struct ImpliedWeights {
  std::string estimand;                // "ate" or "att"
  std::vector<double> raw;             // per dataset row
  std::vector<double> estimator_form;  // per dataset row
  bool tie_averaged = false;
  long m_treated_to_control = 0;
  long m_control_to_treated = 0;  // zero for att
};

// Group-contrast weights from the two directional solutions.
ImpliedWeights implied_weights(const Dataset& ds, const MatchSolution& sol_tc,
                               const MatchSolution& sol_ct,
                               bool average_ties = true);

// Treated-group contrast: treated units weight 1/T, controls cnt/(m*T).
ImpliedWeights implied_weights_att(const Dataset& ds,
                                   const MatchSolution& sol_tc,
                                   bool average_ties = true);

struct BalanceReport {
  // Residual per basis column for each direction; empty when the direction
  // is not part of the estimand.
  std::vector<double> residual_treated_to_control;
  std::vector<double> residual_control_to_treated;
  bool pass = false;  // every residual strictly within its cap
};

// Balance achieved by the weights, evaluated directly from the weighted
// group means of every basis column.
BalanceReport check_balance(const BasisMatrix& bm, const Dataset& ds,
                            const ImpliedWeights& w, const BalanceSpec& spec);

}  // namespace balmatch
