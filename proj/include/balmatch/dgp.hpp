#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "balmatch/dataset.hpp"
#include "balmatch/rng.hpp"

// Synthetic data generators with known truth. Covariates, group assignment
// probability, and the two potential-outcome mean surfaces are explicit
// functions so the generator's estimand and noise structure are exact.

namespace balmatch {

struct DGPSpec {
  std::string name;
  int dim = 0;
  std::function<void(Rng&, std::vector<double>&)> sample_x;
  std::function<double(const std::vector<double>&)> propensity;
  std::function<double(const std::vector<double>&)> mean0;
  std::function<double(const std::vector<double>&)> mean1;
  double noise0 = 0.0;  // homoskedastic normal noise scales
  double noise1 = 0.0;
  double true_ate = 0.0;
};

// Built-in designs:
//  dgp-a: d=2 uniform covariates, logistic assignment in x1+x2, quadratic
//         control surface, heterogeneous effect 1 + (x1-x2)/2, noise 0.5.
//  dgp-b: d=2 uniform covariates, constant assignment probability 0.5,
//         linear surfaces, constant effect 2, noise 1.
//  dgp-c: d=8 uniform covariates, logistic assignment in sum(x-0.5),
//         linear-plus-curvature control surface, constant effect 1,
//         noise 0.25.
DGPSpec make_dgp_a();
DGPSpec make_dgp_b();
DGPSpec make_dgp_c();
DGPSpec dgp_by_name(const std::string& name);

// Draw n units; the observed outcome composes the potential mean of the
// realized group with fresh noise. Same (spec, n, seed) gives identical
// data. Unit ids are u000001-style.
Dataset dgp_sample(const DGPSpec& spec, long n, std::uint64_t seed);

}  // namespace balmatch
