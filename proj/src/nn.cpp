#include "balmatch/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "balmatch/estimator.hpp"

namespace balmatch {

namespace {

// Transform rows so squared euclidean distance in the new coordinates is the
// Mahalanobis distance under the pooled within-group covariance. Returns
// false (leaving points untouched) when the covariance is singular.
bool whiten_pooled(const Dataset& ds, Eigen::MatrixXd& pts) {
  const int d = ds.dim;
  const auto n = static_cast<long>(ds.n());
  Eigen::VectorXd mean1 = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd mean0 = Eigen::VectorXd::Zero(d);
  long n1 = 0;
  long n0 = 0;
  for (long i = 0; i < n; ++i) {
    const Eigen::Map<const Eigen::VectorXd> x(ds.units[i].x.data(), d);
    if (ds.units[i].z == 1) {
      mean1 += x;
      ++n1;
    } else {
      mean0 += x;
      ++n0;
    }
  }
  if (n1 + n0 < d + 2) return false;
  mean1 /= static_cast<double>(n1);
  mean0 /= static_cast<double>(n0);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  for (long i = 0; i < n; ++i) {
    const Eigen::Map<const Eigen::VectorXd> x(ds.units[i].x.data(), d);
    const Eigen::VectorXd c = x - (ds.units[i].z == 1 ? mean1 : mean0);
    scatter += c * c.transpose();
  }
  const Eigen::MatrixXd cov = scatter / static_cast<double>(n1 + n0 - 2);
  // Cholesky alone cannot flag rank deficiency: on a semi-definite matrix
  // the zero pivot has a valid square root and the factorization reports
  // success, so screen the spectrum first.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) return false;
  const double emax = es.eigenvalues().maxCoeff();
  if (!std::isfinite(emax) || emax <= 0.0) return false;
  if (es.eigenvalues().minCoeff() <= 1e-9 * emax) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return false;
  // x -> L^{-1} x
  pts = llt.matrixL().solve(pts.transpose()).transpose();
  return true;
}

}  // namespace

NNReport nn_match(const Dataset& ds, const NNSpec& spec, Direction dir) {
  if (spec.num_matches < 1) {
    throw std::invalid_argument("nn_match: num_matches must be >= 1");
  }
  const int src_z = (dir == Direction::treated_to_control) ? 1 : 0;
  std::vector<int> source_rows;
  std::vector<int> target_rows;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.units[i].z == src_z) {
      source_rows.push_back(static_cast<int>(i));
    } else {
      target_rows.push_back(static_cast<int>(i));
    }
  }
  if (source_rows.empty() || target_rows.empty()) {
    throw std::invalid_argument("nn_match: empty arm");
  }
  const long m = spec.num_matches;
  if (m > static_cast<long>(target_rows.size())) {
    throw std::invalid_argument("nn_match: num_matches exceeds target count");
  }

  Eigen::MatrixXd pts(ds.n(), ds.dim);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.dim; ++j) pts(i, j) = ds.units[i].x[j];
  }
  NNReport rep;
  if (spec.metric == NNSpec::Metric::mahalanobis) {
    rep.mahalanobis_fallback = !whiten_pooled(ds, pts);
  }

  rep.solution.direction = dir;
  rep.solution.with_replacement = true;
  rep.solution.m_value = m;
  rep.solution.source_rows = source_rows;
  rep.solution.target_rows = target_rows;
  rep.solution.pairs.reserve(source_rows.size() * m);

  const long c = static_cast<long>(target_rows.size());
  std::vector<double> dist(c);
  std::vector<int> idx(c);
  for (int src : source_rows) {
    for (long j = 0; j < c; ++j) {
      dist[j] = (pts.row(target_rows[j]) - pts.row(src)).squaredNorm();
      idx[j] = static_cast<int>(j);
    }
    // Select the m nearest with deterministic tie handling: order by
    // (distance, target index).
    std::nth_element(idx.begin(), idx.begin() + (m - 1), idx.end(),
                     [&](int lhs, int rhs) {
                       return dist[lhs] != dist[rhs] ? dist[lhs] < dist[rhs]
                                                     : lhs < rhs;
                     });
    std::sort(idx.begin(), idx.begin() + m, [&](int lhs, int rhs) {
      return dist[lhs] != dist[rhs] ? dist[lhs] < dist[rhs] : lhs < rhs;
    });
    for (long r = 0; r < m; ++r) {
      rep.solution.pairs.push_back(
          MatchPair{src, target_rows[idx[r]]});
    }
  }
  return rep;
}

double ate_nn(const Dataset& ds, const NNSpec& spec) {
  const auto tc = nn_match(ds, spec, Direction::treated_to_control);
  const auto ct = nn_match(ds, spec, Direction::control_to_treated);
  return ate_matched(ds, tc.solution, ct.solution);
}

}  // namespace balmatch
