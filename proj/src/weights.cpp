#include "balmatch/weights.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

namespace balmatch {

namespace {

// Matched count per dataset row for the targets of a solution.
std::vector<long> target_counts(const Dataset& ds, const MatchSolution& sol) {
  std::vector<long> cnt(ds.n(), 0);
  for (const MatchPair& p : sol.pairs) {
    if (p.target_row < 0 || p.target_row >= static_cast<int>(ds.n()) ||
        p.source_row < 0 || p.source_row >= static_cast<int>(ds.n())) {
      throw std::invalid_argument("weights: pair references unknown row");
    }
    ++cnt[p.target_row];
  }
  return cnt;
}

void validate_solution(const Dataset& ds, const MatchSolution& sol,
                       Direction expected) {
  if (sol.direction != expected) {
    throw std::invalid_argument("weights: solution has unexpected direction");
  }
  if (sol.m_value < 1) {
    throw std::invalid_argument("weights: solution multiplicity must be >= 1");
  }
  const int target_z = (expected == Direction::treated_to_control) ? 0 : 1;
  for (const MatchPair& p : sol.pairs) {
    if (ds.units[p.target_row].z != target_z ||
        ds.units[p.source_row].z != 1 - target_z) {
      throw std::invalid_argument("weights: pair crosses the wrong groups");
    }
  }
}

// Average weights over classes of identical (z, x); exchangeable units end
// up with equal weights and every class total is preserved.
void average_over_ties(const Dataset& ds, std::vector<double>& w) {
  std::map<std::pair<int, std::vector<double>>, std::vector<int>> classes;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    classes[{ds.units[i].z, ds.units[i].x}].push_back(static_cast<int>(i));
  }
  for (const auto& [key, rows] : classes) {
    if (rows.size() < 2) continue;
    double total = 0.0;
    for (int r : rows) total += w[r];
    const double mean = total / static_cast<double>(rows.size());
    for (int r : rows) w[r] = mean;
  }
}

}  // namespace

ImpliedWeights implied_weights(const Dataset& ds, const MatchSolution& sol_tc,
                               const MatchSolution& sol_ct,
                               bool average_ties) {
  validate_solution(ds, sol_tc, Direction::treated_to_control);
  validate_solution(ds, sol_ct, Direction::control_to_treated);
  const auto cnt_tc = target_counts(ds, sol_tc);  // counts on control rows
  const auto cnt_ct = target_counts(ds, sol_ct);  // counts on treated rows

  ImpliedWeights w;
  w.estimand = "ate";
  w.m_treated_to_control = sol_tc.m_value;
  w.m_control_to_treated = sol_ct.m_value;
  w.raw.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.units[i].z == 1) {
      w.raw[i] = static_cast<double>(cnt_ct[i]) /
                 static_cast<double>(sol_ct.m_value);
    } else {
      w.raw[i] = static_cast<double>(cnt_tc[i]) /
                 static_cast<double>(sol_tc.m_value);
    }
  }
  if (average_ties) {
    average_over_ties(ds, w.raw);
    w.tie_averaged = true;
  }
  const double n = static_cast<double>(ds.n());
  w.estimator_form.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    w.estimator_form[i] = (1.0 + w.raw[i]) / n;
  }
  return w;
}

ImpliedWeights implied_weights_att(const Dataset& ds,
                                   const MatchSolution& sol_tc,
                                   bool average_ties) {
  validate_solution(ds, sol_tc, Direction::treated_to_control);
  const auto cnt_tc = target_counts(ds, sol_tc);
  const auto n_treated = static_cast<double>(ds.count_z(1));
  if (n_treated == 0) {
    throw std::invalid_argument("weights: no treated units");
  }

  ImpliedWeights w;
  w.estimand = "att";
  w.m_treated_to_control = sol_tc.m_value;
  w.raw.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.units[i].z == 1) {
      w.raw[i] = 1.0;
    } else {
      w.raw[i] = static_cast<double>(cnt_tc[i]) /
                 static_cast<double>(sol_tc.m_value);
    }
  }
  if (average_ties) {
    average_over_ties(ds, w.raw);
    w.tie_averaged = true;
  }
  w.estimator_form.resize(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    w.estimator_form[i] = w.raw[i] / n_treated;
  }
  return w;
}

BalanceReport check_balance(const BasisMatrix& bm, const Dataset& ds,
                            const ImpliedWeights& w, const BalanceSpec& spec) {
  if (bm.n() != ds.n()) {
    throw std::invalid_argument("check_balance: basis/dataset mismatch");
  }
  if (static_cast<int>(spec.delta.size()) != bm.k()) {
    throw std::invalid_argument("check_balance: delta length mismatch");
  }
  const int k = bm.k();
  const auto arm_mean = [&](int z) {
    std::vector<double> mean(k, 0.0);
    long count = 0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.units[i].z != z) continue;
      ++count;
      for (int col = 0; col < k; ++col) mean[col] += bm.values(i, col);
    }
    for (int col = 0; col < k; ++col) mean[col] /= static_cast<double>(count);
    return mean;
  };
  // Weighted mean of a target group: raw weights sum to the source count,
  // so dividing the raw-weighted column sum by that count gives the matched
  // analogue of the group mean.
  const auto weighted_mean = [&](int target_z) {
    std::vector<double> mean(k, 0.0);
    const long sources = static_cast<long>(ds.count_z(1 - target_z));
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.units[i].z != target_z) continue;
      if (w.raw[i] == 0.0) continue;
      for (int col = 0; col < k; ++col) {
        mean[col] += w.raw[i] * bm.values(i, col);
      }
    }
    for (int col = 0; col < k; ++col) mean[col] /= static_cast<double>(sources);
    return mean;
  };

  BalanceReport rep;
  const auto t_mean = arm_mean(1);
  const auto wc = weighted_mean(0);
  rep.residual_treated_to_control.resize(k);
  for (int col = 0; col < k; ++col) {
    rep.residual_treated_to_control[col] = wc[col] - t_mean[col];
  }
  bool pass = balance_ok(rep.residual_treated_to_control, spec.delta);
  if (w.estimand == "ate") {
    const auto c_mean = arm_mean(0);
    const auto wt = weighted_mean(1);
    rep.residual_control_to_treated.resize(k);
    for (int col = 0; col < k; ++col) {
      rep.residual_control_to_treated[col] = wt[col] - c_mean[col];
    }
    pass = pass && balance_ok(rep.residual_control_to_treated, spec.delta);
  }
  rep.pass = pass;
  return rep;
}

}  // namespace balmatch
