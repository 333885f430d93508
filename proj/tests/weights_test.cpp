#include <cmath>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/estimator.hpp"
#include "balmatch/rng.hpp"
#include "balmatch/solver.hpp"
#include "balmatch/weights.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace {

using balmatch::BalanceSpec;
using balmatch::BasisSpec;
using balmatch::Dataset;
using balmatch::Direction;
using balmatch_test::z_of;

}  // namespace

TEST_CASE("raw weights are match counts over multiplicity") {
  // Treated rows 0,1; controls rows 2,3. Force counts (2,0) at m=1 in the
  // treated-to-control direction and (1,1) at m=1 in the reverse.
  Dataset ds;
  ds.dim = 1;
  ds.units = {
      {"t1", 1, 1.0, {0.0}},
      {"t2", 1, 3.0, {1.0}},
      {"c1", 0, 2.0, {0.5}},
      {"c2", 0, 4.0, {9.0}},
  };
  balmatch::CountVector tc;
  tc.counts = {2, 0};
  tc.total = 2;
  const auto sol_tc = balmatch::realize_assignment(
      tc, {0, 1}, {2, 3}, 1, Direction::treated_to_control);
  balmatch::CountVector ct;
  ct.counts = {1, 1};
  ct.total = 2;
  const auto sol_ct = balmatch::realize_assignment(
      ct, {2, 3}, {0, 1}, 1, Direction::control_to_treated);

  const auto w = balmatch::implied_weights(ds, sol_tc, sol_ct);
  CHECK(w.estimand == "ate");
  // Raw weight = times matched / m on the target side of each direction.
  CHECK(w.raw[2] == doctest::Approx(2.0).epsilon(1e-12));  // c1 matched twice
  CHECK(w.raw[3] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w.raw[0] == doctest::Approx(1.0).epsilon(1e-12));  // t1 from reverse
  CHECK(w.raw[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Estimator form (1 + cnt/m)/n sums to 1 per group.
  const double n = 4.0;
  CHECK(w.estimator_form[0] == doctest::Approx((1.0 + 1.0) / n));
  CHECK(w.estimator_form[2] == doctest::Approx((1.0 + 2.0) / n));
  CHECK(w.estimator_form[3] == doctest::Approx(1.0 / n));
  double sum_t = w.estimator_form[0] + w.estimator_form[1];
  double sum_c = w.estimator_form[2] + w.estimator_form[3];
  CHECK(sum_t == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sum_c == doctest::Approx(1.0).epsilon(1e-12));

  // The matched-sample average and the weighted contrast coincide.
  const double matched = balmatch::ate_matched(ds, sol_tc, sol_ct);
  const double weighted = balmatch::ate_weighted(ds, w);
  CHECK(std::abs(matched - weighted) < 1e-12);
}

TEST_CASE("att weights normalize over the treated group") {
  Dataset ds;
  ds.dim = 1;
  ds.units = {
      {"t1", 1, 1.0, {0.0}},
      {"t2", 1, 3.0, {1.0}},
      {"c1", 0, 2.0, {0.5}},
      {"c2", 0, 4.0, {9.0}},
  };
  balmatch::CountVector tc;
  tc.counts = {2, 0};
  tc.total = 2;
  const auto sol_tc = balmatch::realize_assignment(
      tc, {0, 1}, {2, 3}, 1, Direction::treated_to_control);
  const auto w = balmatch::implied_weights_att(ds, sol_tc);
  CHECK(w.estimand == "att");
  CHECK(w.m_control_to_treated == 0);
  CHECK(w.estimator_form[0] == doctest::Approx(0.5));
  CHECK(w.estimator_form[1] == doctest::Approx(0.5));
  CHECK(w.estimator_form[2] == doctest::Approx(1.0));  // 2 matches / (1*2)
  CHECK(w.estimator_form[3] == doctest::Approx(0.0));
  const double att = balmatch::att_matched(ds, sol_tc);
  // mean(y_t) - weighted control mean = 2 - 2.
  CHECK(att == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("tie averaging leaves weighted means unchanged") {
  // Duplicate covariate rows inside the control arm.
  Dataset ds;
  ds.dim = 1;
  ds.units = {
      {"t1", 1, 1.0, {0.2}},
      {"t2", 1, 2.0, {0.8}},
      {"c1", 0, 0.5, {0.5}},
      {"c2", 0, 1.5, {0.5}},  // same covariates as c1
      {"c3", 0, 2.5, {0.9}},
  };
  const auto bm = balmatch::expand(ds, BasisSpec::parse("raw"));
  BalanceSpec spec;
  spec.delta = {0.4};
  const auto rep = balmatch::solve_both_directions(ds, bm, spec);
  REQUIRE(rep.feasible());
  const auto& tc = *rep.treated_to_control.solution;
  const auto& ct = *rep.control_to_treated.solution;

  const auto averaged = balmatch::implied_weights(ds, tc, ct, true);
  const auto plain = balmatch::implied_weights(ds, tc, ct, false);
  CHECK(averaged.tie_averaged);

  // Duplicated units share a weight after averaging.
  CHECK(averaged.raw[2] == doctest::Approx(averaged.raw[3]).epsilon(1e-12));

  // The estimate and the balance residuals are invariant.
  const double a = balmatch::ate_weighted(ds, averaged);
  const double b = balmatch::ate_weighted(ds, plain);
  CHECK(std::abs(a - b) < 1e-12);
  const auto res_a = balmatch::check_balance(bm, ds, averaged, spec);
  const auto res_b = balmatch::check_balance(bm, ds, plain, spec);
  REQUIRE(res_a.residual_treated_to_control.size() ==
          res_b.residual_treated_to_control.size());
  for (std::size_t k = 0; k < res_a.residual_treated_to_control.size(); ++k) {
    CHECK(std::abs(res_a.residual_treated_to_control[k] -
                   res_b.residual_treated_to_control[k]) < 1e-12);
    CHECK(std::abs(res_a.residual_control_to_treated[k] -
                   res_b.residual_control_to_treated[k]) < 1e-12);
  }
}

TEST_CASE("check_balance agrees with solver residuals and pass flag") {
  balmatch::Rng rng(11);
  int checked = 0;
  for (int inst = 0; inst < 30; ++inst) {
    const auto si = balmatch_test::random_small_instance(rng, 5);
    const auto bm = balmatch::expand(si.ds, BasisSpec::parse("raw"));
    const auto rep = balmatch::solve_both_directions(si.ds, bm, si.spec);
    if (!rep.feasible()) continue;
    const auto w = balmatch::implied_weights(
        si.ds, *rep.treated_to_control.solution,
        *rep.control_to_treated.solution);
    const auto bal = balmatch::check_balance(bm, si.ds, w, si.spec);
    CHECK(bal.pass);
    const auto res_tc =
        balmatch::pair_residuals(bm, *rep.treated_to_control.solution);
    for (std::size_t k = 0; k < res_tc.size(); ++k) {
      CHECK(std::abs(bal.residual_treated_to_control[k] - res_tc[k]) < 1e-10);
    }
    ++checked;
  }
  CHECK(checked > 5);
}
