#pragma once

#include <string>

#include "balmatch/dataset.hpp"
#include "balmatch/solver.hpp"

// Nearest-neighbor matching baseline: each source unit is matched to its
// num_matches closest opposite-group units (with replacement), ties broken
// by lower row index. Distances are euclidean on the raw covariates or
// Mahalanobis with the pooled within-group covariance.

namespace balmatch {

struct NNSpec {
  long num_matches = 1;
  enum class Metric { euclidean, mahalanobis } metric = Metric::euclidean;
};

struct NNReport {
  MatchSolution solution;
  bool mahalanobis_fallback = false;  // singular covariance; used euclidean
};

NNReport nn_match(const Dataset& ds, const NNSpec& spec, Direction dir);

// Group contrast from nearest-neighbor matches in both directions.
double ate_nn(const Dataset& ds, const NNSpec& spec);

}  // namespace balmatch
