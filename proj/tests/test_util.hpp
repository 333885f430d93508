#pragma once

#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"
#include "balmatch/rng.hpp"
#include "balmatch/solver.hpp"

// Shared helpers for randomized solver checks: small two-arm datasets with
// assorted tolerance regimes, sized so the exhaustive oracle stays cheap.

namespace balmatch_test {

struct SmallInstance {
  balmatch::Dataset ds;
  balmatch::BalanceSpec spec;
  balmatch::Direction dir = balmatch::Direction::treated_to_control;
  bool with_replacement = true;
};

inline std::vector<int> z_of(const balmatch::Dataset& ds) {
  std::vector<int> z;
  z.reserve(ds.units.size());
  for (const auto& u : ds.units) z.push_back(u.z);
  return z;
}

inline SmallInstance random_small_instance(balmatch::Rng& rng,
                                           int max_arm = 6) {
  SmallInstance inst;
  const int t = 1 + static_cast<int>(rng.below(max_arm));
  const int c = 1 + static_cast<int>(rng.below(max_arm));
  const int d = 1 + static_cast<int>(rng.below(2));
  inst.ds.dim = d;
  for (int i = 0; i < t + c; ++i) {
    balmatch::Unit u;
    u.id = "u" + std::to_string(i);
    u.z = i < t ? 1 : 0;
    u.y = rng.normal();
    for (int j = 0; j < d; ++j) u.x.push_back(rng.uniform(-1.0, 1.0));
    inst.ds.units.push_back(u);
  }
  for (int j = 0; j < d; ++j) {
    // Mix tight, loose, and occasionally unconstrained caps.
    const double roll = rng.uniform();
    if (roll < 0.15) {
      inst.spec.delta.push_back(std::numeric_limits<double>::infinity());
    } else {
      inst.spec.delta.push_back(rng.uniform(0.05, 1.2));
    }
  }
  inst.with_replacement = rng.uniform() < 0.7;
  if (inst.with_replacement) {
    inst.dir = rng.uniform() < 0.5 ? balmatch::Direction::treated_to_control
                                   : balmatch::Direction::control_to_treated;
  } else {
    inst.dir = balmatch::Direction::treated_to_control;
  }
  return inst;
}

}  // namespace balmatch_test
