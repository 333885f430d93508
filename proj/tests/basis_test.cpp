#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"
#include "doctest.h"

namespace {

using balmatch::BasisSpec;
using balmatch::Dataset;

Dataset two_units() {
  Dataset ds;
  ds.dim = 2;
  ds.units = {
      {"a", 1, 0.0, {0.5, 2.0}},
      {"b", 0, 0.0, {-1.0, 3.0}},
  };
  return ds;
}

}  // namespace

TEST_CASE("raw basis reproduces the covariates") {
  const auto ds = two_units();
  const auto bm = balmatch::expand(ds, BasisSpec::parse("raw"));
  CHECK(bm.k() == 2);
  CHECK(bm.column_names == std::vector<std::string>{"x1", "x2"});
  CHECK(bm.values(0, 0) == 0.5);
  CHECK(bm.values(1, 1) == 3.0);
  CHECK(bm.spec.to_string() == "raw");
}

TEST_CASE("polynomial basis stacks per-dimension powers") {
  const auto ds = two_units();
  const auto bm = balmatch::expand(ds, BasisSpec::parse("poly:3"));
  CHECK(bm.k() == 6);
  CHECK(bm.column_names ==
        std::vector<std::string>{"x1", "x1^2", "x1^3", "x2", "x2^2", "x2^3"});
  CHECK(bm.values(0, 1) == 0.25);
  CHECK(bm.values(0, 2) == 0.125);
  CHECK(bm.values(1, 4) == 9.0);
  CHECK(bm.spec.to_string() == "poly:3");
}

TEST_CASE("interaction basis appends cross products") {
  const auto ds = two_units();
  const auto bm = balmatch::expand(ds, BasisSpec::parse("inter:2"));
  CHECK(bm.k() == 3);  // x1, x2, x1*x2
  CHECK(bm.column_names == std::vector<std::string>{"x1", "x2", "x1*x2"});
  CHECK(bm.values(0, 2) == 1.0);
  CHECK(bm.values(1, 2) == -3.0);
}

TEST_CASE("spline basis adds hinge columns per knot") {
  const auto ds = two_units();
  const auto bm = balmatch::expand(ds, BasisSpec::parse("spline:0,1"));
  CHECK(bm.k() == 6);  // (x, (x-0)+, (x-1)+) per dimension
  CHECK(bm.values(0, 1) == 0.5);   // (0.5-0)+
  CHECK(bm.values(0, 2) == 0.0);   // (0.5-1)+
  CHECK(bm.values(1, 1) == 0.0);   // (-1-0)+
  CHECK(bm.values(1, 5) == 2.0);   // (3-1)+
}

TEST_CASE("intercept flag prepends a constant column") {
  const auto ds = two_units();
  const auto bm = balmatch::expand(ds, BasisSpec::parse("raw+int"));
  CHECK(bm.k() == 3);
  CHECK(bm.column_names[0] == "1");
  CHECK(bm.values(0, 0) == 1.0);
  CHECK(bm.values(1, 0) == 1.0);
  CHECK(bm.spec.include_intercept);
  CHECK(bm.spec.to_string() == "raw+int");
}

TEST_CASE("basis parse rejects malformed descriptors") {
  CHECK_THROWS_AS(BasisSpec::parse("nope"), std::invalid_argument);
  CHECK_THROWS_AS(BasisSpec::parse("raw:3"), std::invalid_argument);
  CHECK_THROWS_AS(BasisSpec::parse("spline:"), std::invalid_argument);
  const auto ds = two_units();
  BasisSpec bad_degree;
  bad_degree.kind = balmatch::BasisKind::polynomial;
  bad_degree.degree = 0;
  CHECK_THROWS_AS(balmatch::expand(ds, bad_degree), std::invalid_argument);
  BasisSpec bad_knots;
  bad_knots.kind = balmatch::BasisKind::spline;
  bad_knots.knots = {1.0, 0.0};
  CHECK_THROWS_AS(balmatch::expand(ds, bad_knots), std::invalid_argument);
  CHECK_THROWS_AS(balmatch::expand(Dataset{}, BasisSpec{}),
                  std::invalid_argument);
}

TEST_CASE("expand is a pure function of data and spec") {
  const auto ds = two_units();
  const auto a = balmatch::expand(ds, BasisSpec::parse("poly:2"));
  const auto b = balmatch::expand(ds, BasisSpec::parse("poly:2"));
  REQUIRE(a.values.rows() == b.values.rows());
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.column_names == b.column_names);
}

TEST_CASE("regularity report flags degenerate and wide bases") {
  Dataset ds;
  ds.dim = 2;
  for (int i = 0; i < 40; ++i) {
    const double v = 0.1 * i - 2.0;
    ds.units.push_back({"u" + std::to_string(i), i % 2, 0.0, {v, 1.0 - v}});
  }
  const auto bm = balmatch::expand(ds, BasisSpec::parse("raw"));
  const auto rep = balmatch::check_regularity(bm);
  CHECK(rep.sup_row_norm > 0.0);
  CHECK(rep.operator_norm >= rep.min_eigenvalue);
  // x2 = 1 - x1 exactly, but without an intercept the two columns are
  // linearly independent, so the Gram matrix is nonsingular.
  CHECK_FALSE(rep.degenerate);

  // Adding the intercept closes the collinearity: 1*x1 + 1*x2 - 1 = 0.
  const auto bm_int = balmatch::expand(ds, BasisSpec::parse("raw+int"));
  const auto rep_int = balmatch::check_regularity(bm_int);
  CHECK(rep_int.degenerate);

  Dataset small;
  small.dim = 3;
  small.units = {
      {"a", 1, 0.0, {1.0, 2.0, 3.0}},
      {"b", 0, 0.0, {0.0, 1.0, -1.0}},
  };
  const auto wide = balmatch::expand(small, BasisSpec::parse("poly:2"));
  CHECK(wide.k() == 6);
  CHECK_FALSE(wide.warnings.empty());
  const auto wide_rep = balmatch::check_regularity(wide);
  CHECK(wide_rep.k_exceeds_n);
  CHECK(wide_rep.k_exceeds_root_n);
  CHECK(wide_rep.degenerate);
}
