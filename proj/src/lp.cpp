#include "balmatch/lp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace balmatch {

namespace {

constexpr double kCostTol = 1e-9;    // reduced-cost threshold
constexpr double kPivotTol = 1e-10;  // minimum usable pivot magnitude
constexpr double kFeasTol = 1e-9;    // artificial mass considered zero

enum class VarState { at_lower, at_upper, basic };

}  // namespace

LpResult lp_find_feasible(const LpProblem& p, int max_iters) {
  const int m = static_cast<int>(p.a.rows());
  const int ns = static_cast<int>(p.a.cols());
  if (p.b.size() != m || p.upper.size() != ns) {
    throw std::invalid_argument("lp_find_feasible: dimension mismatch");
  }
  const int total = ns + m;  // structurals then artificials
  if (max_iters <= 0) max_iters = 200 * (m + ns) + 2000;
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<VarState> state(total, VarState::at_lower);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(ns);
  for (int j : p.start_at_upper) {
    if (j < 0 || j >= ns || std::isinf(p.upper(j))) {
      throw std::invalid_argument("lp_find_feasible: bad crash index");
    }
    state[j] = VarState::at_upper;
    x0(j) = p.upper(j);
  }

  // Artificial basis absorbs the residual b - A x0; rows are sign-flipped
  // so every artificial starts nonnegative.
  const Eigen::VectorXd resid = p.b - p.a * x0;
  Eigen::MatrixXd tab(m, total);
  Eigen::VectorXd xb(m);
  for (int i = 0; i < m; ++i) {
    const double sign = (resid(i) < 0.0) ? -1.0 : 1.0;
    tab.row(i).head(ns) = sign * p.a.row(i);
    tab.row(i).tail(m).setZero();
    tab(i, ns + i) = 1.0;
    xb(i) = sign * resid(i);
  }

  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i) {
    basis[i] = ns + i;
    state[ns + i] = VarState::basic;
  }

  auto upper_of = [&](int j) { return j < ns ? p.upper(j) : inf; };

  // Phase-1 reduced costs: cost 1 on artificials, 0 on structurals.
  Eigen::VectorXd cost(total);
  for (int j = 0; j < total; ++j) {
    cost(j) = -tab.col(j).sum();
  }
  for (int i = 0; i < m; ++i) cost(basis[i]) = 0.0;

  LpResult res;
  res.x = Eigen::VectorXd::Zero(ns);

  auto extract = [&]() {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(ns);
    for (int j = 0; j < ns; ++j) {
      if (state[j] == VarState::at_upper) x(j) = p.upper(j);
    }
    for (int i = 0; i < m; ++i) {
      if (basis[i] < ns) {
        double v = xb(i);
        if (v < 0.0) v = 0.0;
        const double ub = p.upper(basis[i]);
        if (v > ub) v = ub;
        x(basis[i]) = v;
      }
    }
    return x;
  };

  auto artificial_mass = [&]() {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      if (basis[i] >= ns) s += std::max(0.0, xb(i));
    }
    return s;
  };

  int iter = 0;
  // Dantzig pricing is fast but can cycle on degenerate bases; after a long
  // stretch without objective progress, switch to Bland's rule, which
  // terminates. Both rules break ties by lowest index, so runs are
  // deterministic.
  bool bland_mode = false;
  int since_improve = 0;
  const int stall_switch = 10 * m + 100;
  double last_mass = inf;
  while (iter < max_iters) {
    const double mass = artificial_mass();
    if (mass <= kFeasTol) {
      res.status = LpStatus::feasible;
      res.infeasibility = 0.0;
      res.iterations = iter;
      res.x = extract();
      return res;
    }
    if (mass < last_mass) {
      last_mass = mass;
      since_improve = 0;
    } else if (!bland_mode && ++since_improve > stall_switch) {
      bland_mode = true;
    }

    // Entering variable among profitable nonbasic variables.
    int enter = -1;
    double sigma = 1.0;
    if (bland_mode) {
      for (int j = 0; j < total; ++j) {
        if (state[j] == VarState::basic) continue;
        if (state[j] == VarState::at_lower && cost(j) < -kCostTol) {
          enter = j;
          sigma = 1.0;
          break;
        }
        if (state[j] == VarState::at_upper && cost(j) > kCostTol) {
          enter = j;
          sigma = -1.0;
          break;
        }
      }
    } else {
      double best = kCostTol;
      for (int j = 0; j < total; ++j) {
        if (state[j] == VarState::basic) continue;
        double viol = 0.0;
        if (state[j] == VarState::at_lower) {
          viol = -cost(j);
        } else {
          viol = cost(j);
        }
        if (viol > best) {
          best = viol;
          enter = j;
          sigma = (state[j] == VarState::at_lower) ? 1.0 : -1.0;
        }
      }
    }
    if (enter < 0) break;  // phase-1 optimum reached, still infeasible

    // Ratio test: entering moves by sigma * t, basics by -sigma * t * y.
    const Eigen::VectorXd y = tab.col(enter);
    double t_limit = upper_of(enter);  // bound-flip distance
    int leave_row = -1;
    bool leave_to_upper = false;
    for (int i = 0; i < m; ++i) {
      const double delta = -sigma * y(i);
      if (delta < -kPivotTol) {
        const double t = xb(i) / (-delta);
        if (t < t_limit - 1e-12 ||
            (t < t_limit + 1e-12 && leave_row >= 0 &&
             basis[i] < basis[leave_row])) {
          t_limit = t;
          leave_row = i;
          leave_to_upper = false;
        }
      } else if (delta > kPivotTol) {
        const double ub = upper_of(basis[i]);
        if (std::isinf(ub)) continue;
        const double t = (ub - xb(i)) / delta;
        if (t < t_limit - 1e-12 ||
            (t < t_limit + 1e-12 && leave_row >= 0 &&
             basis[i] < basis[leave_row])) {
          t_limit = t;
          leave_row = i;
          leave_to_upper = true;
        }
      }
    }

    if (std::isinf(t_limit)) {
      // Unbounded direction cannot happen for a bounded phase-1 objective.
      res.status = LpStatus::stalled;
      res.infeasibility = artificial_mass();
      res.iterations = iter;
      res.x = extract();
      return res;
    }
    if (t_limit < 0.0) t_limit = 0.0;

    if (leave_row < 0) {
      // Bound flip: entering variable jumps to its other bound.
      xb -= sigma * t_limit * y;
      state[enter] = (state[enter] == VarState::at_lower) ? VarState::at_upper
                                                          : VarState::at_lower;
      ++iter;
      continue;
    }

    const double piv = tab(leave_row, enter);
    if (std::abs(piv) < kPivotTol) {
      res.status = LpStatus::stalled;
      res.infeasibility = artificial_mass();
      res.iterations = iter;
      res.x = extract();
      return res;
    }

    // Move to the blocking bound, then pivot.
    xb -= sigma * t_limit * y;
    const double entering_value =
        (state[enter] == VarState::at_lower ? 0.0 : upper_of(enter)) +
        sigma * t_limit;
    const int leaving = basis[leave_row];
    state[leaving] = leave_to_upper ? VarState::at_upper : VarState::at_lower;
    basis[leave_row] = enter;
    state[enter] = VarState::basic;

    tab.row(leave_row) /= piv;
    xb(leave_row) = entering_value;
    for (int i = 0; i < m; ++i) {
      if (i == leave_row) continue;
      const double f = tab(i, enter);
      if (f != 0.0) tab.row(i) -= f * tab.row(leave_row);
    }
    const double cf = cost(enter);
    if (cf != 0.0) cost -= cf * tab.row(leave_row).transpose();
    ++iter;
  }

  res.infeasibility = artificial_mass();
  res.iterations = iter;
  res.x = extract();
  res.status =
      (res.infeasibility <= kFeasTol)
          ? LpStatus::feasible
          : (iter >= max_iters ? LpStatus::stalled : LpStatus::infeasible);
  return res;
}

}  // namespace balmatch
