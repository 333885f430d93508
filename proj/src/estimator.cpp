#include "balmatch/estimator.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace balmatch {

namespace {

// Matched outcome sums per source row; enforces that every source has
// exactly m matches, which realize_assignment guarantees by construction.
struct SourceSums {
  std::vector<double> sum_y;   // indexed by dataset row
  std::vector<long> count;
};

SourceSums matched_sums(const Dataset& ds, const MatchSolution& sol) {
  SourceSums ss;
  ss.sum_y.assign(ds.n(), 0.0);
  ss.count.assign(ds.n(), 0);
  for (const MatchPair& p : sol.pairs) {
    if (p.source_row < 0 || p.source_row >= static_cast<int>(ds.n()) ||
        p.target_row < 0 || p.target_row >= static_cast<int>(ds.n())) {
      throw std::invalid_argument("estimator: pair references unknown row");
    }
    ss.sum_y[p.source_row] += ds.units[p.target_row].y;
    ++ss.count[p.source_row];
  }
  for (int row : sol.source_rows) {
    if (ss.count[row] != sol.m_value) {
      throw std::logic_error("estimator: source with match count != m");
    }
  }
  return ss;
}

void expect_direction(const MatchSolution& sol, Direction dir,
                      const char* which) {
  if (sol.direction != dir) {
    throw std::invalid_argument(std::string("estimator: ") + which +
                                " solution has the wrong direction");
  }
  if (sol.m_value < 1 || sol.source_rows.empty()) {
    throw std::invalid_argument(std::string("estimator: ") + which +
                                " solution is empty");
  }
}

std::vector<long> target_counts(const Dataset& ds, const MatchSolution& sol) {
  std::vector<long> cnt(ds.n(), 0);
  for (const MatchPair& p : sol.pairs) ++cnt[p.target_row];
  return cnt;
}

// Per-group least squares of y on the design; ridge fallback on rank
// deficiency. Returns fitted values for every dataset row.
Eigen::VectorXd fit_surface(const Eigen::MatrixXd& design,
                            const Dataset& ds, int arm, bool& ridge_used) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.units[i].z == arm) rows.push_back(static_cast<int>(i));
  }
  if (rows.empty()) {
    throw std::invalid_argument("estimator: a group has no units");
  }
  const int p = static_cast<int>(design.cols());
  Eigen::MatrixXd x(rows.size(), p);
  Eigen::VectorXd y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    x.row(r) = design.row(rows[r]);
    y(r) = ds.units[rows[r]].y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  Eigen::VectorXd beta;
  if (qr.rank() < p) {
    constexpr double kRidge = 1e-8;
    const Eigen::MatrixXd gram =
        x.transpose() * x + kRidge * Eigen::MatrixXd::Identity(p, p);
    beta = gram.ldlt().solve(x.transpose() * y);
    ridge_used = true;
  } else {
    beta = qr.solve(y);
  }
  return design * beta;
}

}  // namespace

double ate_matched(const Dataset& ds, const MatchSolution& sol_tc,
                   const MatchSolution& sol_ct) {
  expect_direction(sol_tc, Direction::treated_to_control, "treated-side");
  expect_direction(sol_ct, Direction::control_to_treated, "control-side");
  const auto tc = matched_sums(ds, sol_tc);
  const auto ct = matched_sums(ds, sol_ct);
  double acc = 0.0;
  for (int row : sol_tc.source_rows) {
    acc += ds.units[row].y -
           tc.sum_y[row] / static_cast<double>(sol_tc.m_value);
  }
  for (int row : sol_ct.source_rows) {
    acc += ct.sum_y[row] / static_cast<double>(sol_ct.m_value) -
           ds.units[row].y;
  }
  return acc / static_cast<double>(ds.n());
}

double ate_weighted(const Dataset& ds, const ImpliedWeights& w) {
  if (w.estimand != "ate") {
    throw std::invalid_argument("ate_weighted: weights are not for ate");
  }
  if (w.estimator_form.size() != ds.n()) {
    throw std::invalid_argument("ate_weighted: weight length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double term = w.estimator_form[i] * ds.units[i].y;
    acc += ds.units[i].z == 1 ? term : -term;
  }
  return acc;
}

double att_matched(const Dataset& ds, const MatchSolution& sol_tc) {
  expect_direction(sol_tc, Direction::treated_to_control, "treated-side");
  const auto tc = matched_sums(ds, sol_tc);
  double acc = 0.0;
  for (int row : sol_tc.source_rows) {
    acc += ds.units[row].y -
           tc.sum_y[row] / static_cast<double>(sol_tc.m_value);
  }
  return acc / static_cast<double>(sol_tc.source_rows.size());
}

VariancePlugin variance_plugin(const Dataset& ds, const BasisMatrix& bm,
                               const MatchSolution& sol_tc,
                               const MatchSolution& sol_ct) {
  if (bm.n() != ds.n()) {
    throw std::invalid_argument("variance_plugin: basis/dataset mismatch");
  }
  expect_direction(sol_tc, Direction::treated_to_control, "treated-side");
  expect_direction(sol_ct, Direction::control_to_treated, "control-side");

  // Design: basis columns, plus an intercept unless a nonzero constant
  // column is already present.
  const int k = bm.k();
  bool has_constant = false;
  for (int col = 0; col < k && !has_constant; ++col) {
    const double lo = bm.values.col(col).minCoeff();
    const double hi = bm.values.col(col).maxCoeff();
    has_constant = (lo == hi && lo != 0.0);
  }
  Eigen::MatrixXd design;
  if (has_constant) {
    design = bm.values;
  } else {
    design.resize(bm.values.rows(), k + 1);
    design.col(0).setOnes();
    design.rightCols(k) = bm.values;
  }

  VariancePlugin out;
  const Eigen::VectorXd fit1 = fit_surface(design, ds, 1, out.ridge_fallback);
  const Eigen::VectorXd fit0 = fit_surface(design, ds, 0, out.ridge_fallback);

  const auto cnt_tc = target_counts(ds, sol_tc);  // counts on control rows
  const auto cnt_ct = target_counts(ds, sol_ct);  // counts on treated rows
  const double point = ate_matched(ds, sol_tc, sol_ct);

  const auto n = ds.n();
  out.influence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Unit& u = ds.units[i];
    double s = fit1(i) - fit0(i) - point;
    if (u.z == 1) {
      const double nw = 1.0 + static_cast<double>(cnt_ct[i]) /
                                  static_cast<double>(sol_ct.m_value);
      s += nw * (u.y - fit1(i));
    } else {
      const double nw = 1.0 + static_cast<double>(cnt_tc[i]) /
                                  static_cast<double>(sol_tc.m_value);
      s -= nw * (u.y - fit0(i));
    }
    out.influence[i] = s;
  }

  double mean = 0.0;
  for (double s : out.influence) mean += s;
  mean /= static_cast<double>(n);
  double ssq = 0.0;
  for (double s : out.influence) ssq += (s - mean) * (s - mean);
  out.variance = (n > 1) ? ssq / static_cast<double>(n - 1) : 0.0;
  return out;
}

double normal_quantile_two_sided(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("interval level must be in (0,1)");
  }
  if (std::abs(level - 0.95) < 1e-12) return kZ975;
  const double p = 0.5 + level / 2.0;

  // Rational approximation, then one Halley refinement against erfc.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  constexpr double kSqrt2Pi = 2.506628274631000502;
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * kSqrt2Pi * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

EstimateResult estimate_ate(const Dataset& ds, const BasisMatrix& bm,
                            const MatchSolution& sol_tc,
                            const MatchSolution& sol_ct, double level) {
  EstimateResult res;
  res.estimand = "ate";
  res.n = ds.n();
  res.ci_level = level;
  res.point = ate_matched(ds, sol_tc, sol_ct);
  const auto vp = variance_plugin(ds, bm, sol_tc, sol_ct);
  res.variance = vp.variance;
  res.ridge_fallback = vp.ridge_fallback;
  res.variance_per_obs = vp.variance / static_cast<double>(ds.n());
  const double z = normal_quantile_two_sided(level);
  const double half = z * std::sqrt(*res.variance_per_obs);
  res.ci_lo = res.point - half;
  res.ci_hi = res.point + half;
  return res;
}

EstimateResult estimate_att(const Dataset& ds, const MatchSolution& sol_tc) {
  EstimateResult res;
  res.estimand = "att";
  res.n = ds.n();
  res.point = att_matched(ds, sol_tc);
  res.caveat =
      "variance not reported: the influence-function plug-in applies to the "
      "whole-population contrast, not the treated-only estimand";
  return res;
}

EfficiencyBound oracle_efficiency_bound(const DGPSpec& dgp, long draws,
                                        std::uint64_t seed) {
  if (draws < 2) {
    throw std::invalid_argument("oracle_efficiency_bound: need >= 2 draws");
  }
  Rng rng(mix_seed({seed, 0xb0a7dULL}));
  std::vector<double> x(dgp.dim);
  double acc = 0.0;
  double acc_sq = 0.0;
  const double v1 = dgp.noise1 * dgp.noise1;
  const double v0 = dgp.noise0 * dgp.noise0;
  for (long i = 0; i < draws; ++i) {
    dgp.sample_x(rng, x);
    const double pi = dgp.propensity(x);
    if (!(pi > 0.0 && pi < 1.0)) {
      throw std::runtime_error(
          "oracle_efficiency_bound: assignment probability must be interior");
    }
    const double effect = dgp.mean1(x) - dgp.mean0(x);
    const double v =
        v1 / pi + v0 / (1.0 - pi) + (effect - dgp.true_ate) * (effect - dgp.true_ate);
    acc += v;
    acc_sq += v * v;
  }
  EfficiencyBound out;
  out.draws = draws;
  out.value = acc / static_cast<double>(draws);
  const double var =
      (acc_sq - acc * acc / static_cast<double>(draws)) /
      static_cast<double>(draws - 1);
  out.se = std::sqrt(std::max(0.0, var) / static_cast<double>(draws));
  return out;
}

}  // namespace balmatch
