#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "balmatch/basis.hpp"
#include "balmatch/dgp.hpp"
#include "balmatch/nn.hpp"
#include "balmatch/solver.hpp"

// Monte Carlo study runner. For each sample size and replication a fresh
// dataset is drawn from a generator with known truth, every requested
// estimator is evaluated on the same draw, and per-cell error summaries are
// aggregated. Dataset and solver seeds are derived from (base seed, sample
// size index, replication) only, so results are identical across thread
// counts.

namespace balmatch {

enum class EstimatorKind { balance, nn };

const char* estimator_kind_name(EstimatorKind kind);
EstimatorKind estimator_kind_from_name(const std::string& name);

struct DeltaPolicy {
  enum class Kind { schedule, fixed };
  Kind kind = Kind::schedule;
  // schedule: delta_k = scale * n^{-1/2} * sd(column k), floored at 1e-9.
  double scale = 0.5;
  std::vector<double> fixed_values;  // kind == fixed

  static DeltaPolicy schedule(double scale = 0.5);
  static DeltaPolicy fixed(std::vector<double> values);
};

std::vector<double> delta_from_policy(const DeltaPolicy& policy,
                                      const BasisMatrix& bm);

struct ExperimentSpec {
  std::string dgp = "dgp-a";
  std::vector<EstimatorKind> estimators = {EstimatorKind::balance};
  std::vector<long> sample_sizes;
  int replications = 100;
  DeltaPolicy delta;
  BasisSpec basis;       // balance columns; nn always uses raw covariates
  double ci_level = 0.95;
  SolverOptions solver;  // per-replication seeds override solver.seed
  NNSpec nn;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct MCCell {
  std::string estimator;
  long n = 0;
  int replications = 0;
  int infeasible = 0;  // replications with no estimate
  double bias = 0.0;
  double rmse = 0.0;
  double sd = 0.0;       // dispersion form with rmse^2 = bias^2 + sd^2
  double mean_se = 0.0;  // NaN when the estimator reports no variance
  double coverage = 0.0; // NaN likewise
};

struct MCReport {
  std::string dgp;
  double true_value = 0.0;
  std::vector<MCCell> cells;  // estimator-major, sample sizes in given order
};

MCReport run_monte_carlo(const ExperimentSpec& spec);

// Least-squares slope of log(rmse) on log(n); needs >= 3 points.
double rate_fit(const std::vector<double>& sample_sizes,
                const std::vector<double>& rmses);

// CSV rendering with header
// estimator,n,replications,infeasible,bias,rmse,sd,mean_se,coverage
std::string mc_report_csv(const MCReport& report);

}  // namespace balmatch
