#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "balmatch/dgp.hpp"
#include "balmatch/nn.hpp"
#include "balmatch/rng.hpp"
#include "doctest.h"

namespace {

using balmatch::Dataset;
using balmatch::Direction;
using balmatch::NNSpec;

// Brute-force matching used to cross-check: for each source row, the k
// euclidean-closest opposite rows, ties resolved toward the lower index.
std::vector<std::vector<int>> brute_nn(const Dataset& ds, int source_z,
                                       long k) {
  std::vector<std::vector<int>> out(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.units[i].z != source_z) continue;
    std::vector<std::pair<double, int>> cand;
    for (std::size_t j = 0; j < ds.n(); ++j) {
      if (ds.units[j].z == source_z) continue;
      double d2 = 0.0;
      for (int c = 0; c < ds.dim; ++c) {
        const double diff = ds.units[i].x[c] - ds.units[j].x[c];
        d2 += diff * diff;
      }
      cand.push_back({d2, static_cast<int>(j)});
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first < b.first;
                       return a.second < b.second;
                     });
    for (long c = 0; c < k; ++c) out[i].push_back(cand[c].second);
  }
  return out;
}

Dataset make_units(int n_t, int n_c, int d, std::uint64_t seed) {
  balmatch::Rng rng(seed);
  Dataset ds;
  ds.dim = d;
  for (int i = 0; i < n_t + n_c; ++i) {
    balmatch::Unit u;
    u.id = "u" + std::to_string(i);
    u.z = i < n_t ? 1 : 0;
    u.y = rng.normal();
    for (int j = 0; j < d; ++j) u.x.push_back(rng.uniform(-1.0, 1.0));
    ds.units.push_back(u);
  }
  return ds;
}

}  // namespace

TEST_CASE("nearest neighbor matching agrees with brute force") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const Dataset ds = make_units(9, 13, 2, seed);
    for (long k : {1L, 3L}) {
      NNSpec spec;
      spec.num_matches = k;
      const auto rep = balmatch::nn_match(ds, spec,
                                          Direction::treated_to_control);
      CHECK_FALSE(rep.mahalanobis_fallback);
      CHECK(rep.solution.m_value == k);
      const auto expected = brute_nn(ds, 1, k);
      std::vector<std::vector<int>> got(ds.n());
      for (const auto& p : rep.solution.pairs) {
        got[p.source_row].push_back(p.target_row);
      }
      for (std::size_t i = 0; i < ds.n(); ++i) {
        std::vector<int> e = expected[i];
        std::vector<int> g = got[i];
        std::sort(e.begin(), e.end());
        std::sort(g.begin(), g.end());
        CHECK(e == g);
      }
    }
  }
}

TEST_CASE("nn ties break toward the lower row index") {
  Dataset ds;
  ds.dim = 1;
  ds.units = {
      {"t1", 1, 0.0, {0.0}},
      {"c1", 0, 0.0, {1.0}},
      {"c2", 0, 0.0, {-1.0}},  // same distance as c1
  };
  NNSpec spec;
  const auto rep = balmatch::nn_match(ds, spec,
                                      Direction::treated_to_control);
  REQUIRE(rep.solution.pairs.size() == 1);
  CHECK(rep.solution.pairs[0].target_row == 1);
}

TEST_CASE("mahalanobis matching equals euclidean matching on whitened data") {
  // Recompute the pooled within-group covariance here, whiten the points,
  // and check the metric variant agrees with brute force in that space.
  const Dataset ds = make_units(8, 11, 2, 21);
  Eigen::VectorXd mean1 = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd mean0 = Eigen::VectorXd::Zero(2);
  double n1 = 0.0;
  double n0 = 0.0;
  for (const auto& u : ds.units) {
    const Eigen::Map<const Eigen::VectorXd> x(u.x.data(), 2);
    if (u.z == 1) {
      mean1 += x;
      n1 += 1.0;
    } else {
      mean0 += x;
      n0 += 1.0;
    }
  }
  mean1 /= n1;
  mean0 /= n0;
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(2, 2);
  for (const auto& u : ds.units) {
    const Eigen::Map<const Eigen::VectorXd> x(u.x.data(), 2);
    const Eigen::VectorXd c = x - (u.z == 1 ? mean1 : mean0);
    scatter += c * c.transpose();
  }
  const Eigen::MatrixXd cov = scatter / (n1 + n0 - 2.0);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  REQUIRE(llt.info() == Eigen::Success);

  Dataset whitened = ds;
  for (auto& u : whitened.units) {
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(u.x.data(), 2);
    const Eigen::VectorXd w = llt.matrixL().solve(x);
    u.x = {w(0), w(1)};
  }
  const auto expected = brute_nn(whitened, 1, 1);

  NNSpec ma;
  ma.metric = NNSpec::Metric::mahalanobis;
  const auto rep = balmatch::nn_match(ds, ma, Direction::treated_to_control);
  CHECK_FALSE(rep.mahalanobis_fallback);
  for (const auto& p : rep.solution.pairs) {
    REQUIRE(expected[p.source_row].size() == 1);
    CHECK(p.target_row == expected[p.source_row][0]);
  }
}

TEST_CASE("nn estimate contrasts both directions") {
  const Dataset ds = make_units(10, 12, 3, 9);
  NNSpec spec;
  const double ate = balmatch::ate_nn(ds, spec);
  // Reproduce from the two directional solutions.
  const auto tc = balmatch::nn_match(ds, spec, Direction::treated_to_control);
  const auto ct = balmatch::nn_match(ds, spec, Direction::control_to_treated);
  double acc = 0.0;
  for (const auto& p : tc.solution.pairs) {
    acc += ds.units[p.source_row].y - ds.units[p.target_row].y;
  }
  for (const auto& p : ct.solution.pairs) {
    acc += ds.units[p.target_row].y - ds.units[p.source_row].y;
  }
  CHECK(ate == doctest::Approx(acc / static_cast<double>(ds.n()))
                   .epsilon(1e-12));
}

TEST_CASE("nn rejects degenerate inputs") {
  Dataset ds;
  ds.dim = 1;
  ds.units = {{"t1", 1, 0.0, {0.0}}};
  NNSpec spec;
  CHECK_THROWS_AS(balmatch::ate_nn(ds, spec), std::invalid_argument);
  ds.units.push_back({"c1", 0, 0.0, {1.0}});
  CHECK_NOTHROW(balmatch::ate_nn(ds, spec));
  NNSpec too_many;
  too_many.num_matches = 5;
  CHECK_THROWS_AS(balmatch::nn_match(ds, too_many,
                                     Direction::treated_to_control),
                  std::invalid_argument);
}

TEST_CASE("duplicate covariate columns trigger the euclidean fallback") {
  // Integer covariates with x2 = 2*x1 exactly: the pooled covariance is
  // exactly singular, so the whitening step must report failure.
  Dataset ds;
  ds.dim = 2;
  for (int i = 0; i < 10; ++i) {
    const double v = i;
    ds.units.push_back({"u" + std::to_string(i), i % 2, 0.0, {v, 2.0 * v}});
  }
  NNSpec ma;
  ma.metric = NNSpec::Metric::mahalanobis;
  const auto rep = balmatch::nn_match(ds, ma, Direction::treated_to_control);
  CHECK(rep.mahalanobis_fallback);
}
