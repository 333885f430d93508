#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"

// Constrained matching solver. A match assigns every source unit exactly M
// targets from the opposite group (targets may repeat across sources when
// matching with replacement) subject to strict caps on the absolute
// difference between the source-group mean and the match-weighted target
// mean of every basis column.
//
// Feasibility depends on the assignment matrix only through the per-target
// match counts c_j, so the search runs over integer count vectors: exact
// depth-first enumeration with interval pruning on small instances, and an
// LP relaxation followed by randomized rounding and local transfer repair on
// large ones. Any count vector with sum M * S and entries in [0, S] is
// realizable as an assignment; see realize_assignment.

namespace balmatch {

enum class Direction { treated_to_control, control_to_treated };

std::string direction_name(Direction dir);

// Strict comparison slack: residual r_k passes iff |r_k| < delta_k - slack,
// so ties at the cap count as infeasible. Shared by the solver, the
// reference oracle, and all balance diagnostics.
inline constexpr double kBalanceSlack = 1e-12;

struct BalanceSpec {
  std::vector<double> delta;  // one strict cap per basis column; +inf allowed
};

bool balance_ok(const std::vector<double>& residuals,
                const std::vector<double>& delta);

struct CountVector {
  std::vector<long> counts;  // matches received, one entry per target
  long total = 0;            // sum of counts = M * (number of sources)
};

struct MatchPair {
  int source_row = 0;  // dataset row indices
  int target_row = 0;
};

struct MatchSolution {
  Direction direction = Direction::treated_to_control;
  bool with_replacement = true;
  long m_value = 0;
  std::vector<int> source_rows;   // ascending dataset rows
  std::vector<int> target_rows;   // ascending dataset rows
  std::vector<MatchPair> pairs;   // target-major emission order
};

struct MPolicy {
  enum class Kind { maximize, fixed, largest_at_most };
  Kind kind = Kind::maximize;
  long m = 0;

  static MPolicy maximize() { return {}; }
  static MPolicy fixed(long m) { return {Kind::fixed, m}; }
  static MPolicy largest_at_most(long m) { return {Kind::largest_at_most, m}; }
};

struct SolverOptions {
  long exact_limit = 12;         // exact search when targets <= this
  std::uint64_t seed = 0;        // rounding/repair stream
  double lp_margin = 0.10;       // delta shrink factor guiding rounding
  int repair_max_iters = 400;    // local transfer repair budget
  int rounding_attempts = 3;     // randomized rounding retries per probe
  bool force_heuristic = false;  // testing hook: skip exact search
};

struct DirectionDiagnostics {
  Direction direction = Direction::treated_to_control;
  bool feasible = false;
  long m_value = 0;
  bool exact = false;             // probes were solved by exact search
  bool certified_absent = false;  // infeasibility proven, not heuristic
  long probes = 0;                // multiplicities examined
  // Best candidate seen across probes: smallest worst excess |r_k| - delta_k
  // (negative means some candidate satisfied the caps).
  double best_excess = std::numeric_limits<double>::infinity();
  int best_excess_column = -1;
  long best_excess_m = 0;
};

struct SolveReport {
  std::optional<MatchSolution> solution;
  DirectionDiagnostics diag;
};

struct BothDirectionsReport {
  SolveReport treated_to_control;
  SolveReport control_to_treated;
  bool feasible() const {
    return treated_to_control.solution.has_value() &&
           control_to_treated.solution.has_value();
  }
};

// Largest admissible multiplicity for the given arm sizes.
long max_multiplicity(long n_sources, long n_targets, bool with_replacement);

// Canonical residual evaluation from counts: r_k = sum_j c_j B_jk / total -
// mean_k(sources). Also used by weights-based diagnostics.
std::vector<double> count_residuals(const BasisMatrix& bm,
                                    const std::vector<int>& source_rows,
                                    const std::vector<int>& target_rows,
                                    const CountVector& cv);

// Residuals evaluated directly from pairs, mean over pairs of
// (B(target) - B(source)); algebraically equal to count_residuals.
std::vector<double> pair_residuals(const BasisMatrix& bm,
                                   const MatchSolution& sol);

// One feasible count vector at multiplicity m, or nullopt.
std::optional<CountVector> feasible_counts(const BasisMatrix& bm,
                                           const std::vector<int>& z,
                                           const BalanceSpec& spec,
                                           Direction dir, long m,
                                           bool with_replacement = true,
                                           const SolverOptions& opt = {});

// Deterministic realization of a valid count vector as explicit pairs via
// round-robin dealing: lay targets out with multiplicity c_j in index order
// and deal positions to sources cyclically. Every count vector with
// total = m * |sources| and 0 <= c_j <= |sources| is realizable this way.
// Throws std::invalid_argument when the count vector is invalid.
MatchSolution realize_assignment(const CountVector& cv,
                                 const std::vector<int>& source_rows,
                                 const std::vector<int>& target_rows, long m,
                                 Direction dir, bool with_replacement = true);

SolveReport solve_balance_match(const Dataset& ds, const BasisMatrix& bm,
                                const BalanceSpec& spec, Direction dir,
                                bool with_replacement = true,
                                const MPolicy& policy = {},
                                const SolverOptions& opt = {});

// Independent subproblems for the two matching directions; estimation of a
// full group contrast needs both to be feasible.
BothDirectionsReport solve_both_directions(const Dataset& ds,
                                           const BasisMatrix& bm,
                                           const BalanceSpec& spec,
                                           bool with_replacement = true,
                                           const MPolicy& policy = {},
                                           const SolverOptions& opt = {});

// Reference oracle: exhaustive enumeration over assignment matrices (an
// M-subset of targets per source), independent of the count-vector search.
// Returns the largest feasible multiplicity, or nullopt when none exists.
// Intended for small instances only.
std::optional<long> oracle_max_m(const BasisMatrix& bm,
                                 const std::vector<int>& z,
                                 const BalanceSpec& spec, Direction dir,
                                 bool with_replacement = true);

bool oracle_feasible_m(const BasisMatrix& bm, const std::vector<int>& z,
                       const BalanceSpec& spec, Direction dir, long m,
                       bool with_replacement = true);

}  // namespace balmatch
