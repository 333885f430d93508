#include <cmath>
#include <limits>

#include "balmatch/lp.hpp"
#include "balmatch/rng.hpp"
#include "doctest.h"

namespace {

using balmatch::LpProblem;
using balmatch::LpResult;
using balmatch::LpStatus;

constexpr double kInf = std::numeric_limits<double>::infinity();

bool satisfies(const LpProblem& p, const Eigen::VectorXd& x, double tol) {
  if ((p.a * x - p.b).cwiseAbs().maxCoeff() > tol) return false;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x(j) < -tol) return false;
    if (std::isfinite(p.upper(j)) && x(j) > p.upper(j) + tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("simplex finds a point on a simplex face") {
  LpProblem p;
  p.a.resize(1, 3);
  p.a << 1.0, 1.0, 1.0;
  p.b.resize(1);
  p.b << 1.0;
  p.upper = Eigen::VectorXd::Constant(3, 1.0);
  const LpResult r = balmatch::lp_find_feasible(p);
  REQUIRE(r.status == LpStatus::feasible);
  CHECK(satisfies(p, r.x, 1e-9));
}

TEST_CASE("simplex handles ranged rows via bounded slack variables") {
  // x1 + x2 = 1, and x1 - x2 + s = 0.3 with s in [0, 0.6]: the difference
  // x1 - x2 must land in [-0.3, 0.3].
  LpProblem p;
  p.a.resize(2, 3);
  p.a << 1.0, 1.0, 0.0, 1.0, -1.0, 1.0;
  p.b.resize(2);
  p.b << 1.0, 0.3;
  p.upper.resize(3);
  p.upper << 1.0, 1.0, 0.6;
  const LpResult r = balmatch::lp_find_feasible(p);
  REQUIRE(r.status == LpStatus::feasible);
  CHECK(satisfies(p, r.x, 1e-9));
  CHECK(r.x(0) - r.x(1) <= 0.3 + 1e-9);
  CHECK(r.x(0) - r.x(1) >= -0.3 - 1e-9);
}

TEST_CASE("simplex certifies infeasibility from bound mass") {
  // x1 + x2 = 3 with both variables capped at 1.
  LpProblem p;
  p.a.resize(1, 2);
  p.a << 1.0, 1.0;
  p.b.resize(1);
  p.b << 3.0;
  p.upper = Eigen::VectorXd::Constant(2, 1.0);
  const LpResult r = balmatch::lp_find_feasible(p);
  CHECK(r.status == LpStatus::infeasible);
  CHECK(r.infeasibility > 0.5);
}

TEST_CASE("crash start does not change feasibility answers") {
  LpProblem p;
  p.a.resize(2, 4);
  p.a << 1.0, 1.0, 1.0, 1.0, 2.0, -1.0, 0.5, 0.0;
  p.b.resize(2);
  p.b << 1.0, 0.4;
  p.upper = Eigen::VectorXd::Constant(4, 0.5);
  const LpResult plain = balmatch::lp_find_feasible(p);
  REQUIRE(plain.status == LpStatus::feasible);

  LpProblem warm = p;
  warm.start_at_upper = {0, 2};
  const LpResult r = balmatch::lp_find_feasible(warm);
  REQUIRE(r.status == LpStatus::feasible);
  CHECK(satisfies(p, r.x, 1e-9));
}

TEST_CASE("unbounded-above columns are usable") {
  LpProblem p;
  p.a.resize(1, 2);
  p.a << 1.0, 1.0;
  p.b.resize(1);
  p.b << 5.0;
  p.upper.resize(2);
  p.upper << 1.0, kInf;
  const LpResult r = balmatch::lp_find_feasible(p);
  REQUIRE(r.status == LpStatus::feasible);
  CHECK(satisfies(p, r.x, 1e-9));
}

TEST_CASE("random feasible systems are solved and verified") {
  balmatch::Rng rng(17);
  int solved = 0;
  for (int inst = 0; inst < 60; ++inst) {
    const int m = 1 + static_cast<int>(rng.below(4));
    const int n = m + 1 + static_cast<int>(rng.below(20));
    LpProblem p;
    p.a.resize(m, n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) p.a(i, j) = rng.uniform(-2.0, 2.0);
    }
    p.upper = Eigen::VectorXd::Constant(n, rng.uniform(0.5, 2.0));
    // Feasible by construction: b is the image of an interior point.
    Eigen::VectorXd x0(n);
    for (int j = 0; j < n; ++j) x0(j) = rng.uniform() * p.upper(j);
    p.b = p.a * x0;
    const LpResult r = balmatch::lp_find_feasible(p);
    REQUIRE(r.status == LpStatus::feasible);
    CHECK(satisfies(p, r.x, 1e-8));
    ++solved;
  }
  CHECK(solved == 60);
}

TEST_CASE("repeated solves are bitwise deterministic") {
  LpProblem p;
  p.a.resize(2, 6);
  p.a << 1, 1, 1, 1, 1, 1, 0.3, -0.2, 0.9, -0.4, 0.05, 0.6;
  p.b.resize(2);
  p.b << 1.0, 0.2;
  p.upper = Eigen::VectorXd::Constant(6, 0.4);
  const LpResult a = balmatch::lp_find_feasible(p);
  const LpResult b = balmatch::lp_find_feasible(p);
  REQUIRE(a.status == LpStatus::feasible);
  REQUIRE(b.status == LpStatus::feasible);
  CHECK(a.iterations == b.iterations);
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() == 0.0);
}
