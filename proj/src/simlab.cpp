#include "balmatch/simlab.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

#include "balmatch/estimator.hpp"
#include "balmatch/rng.hpp"

namespace balmatch {

namespace {

constexpr double kDeltaFloor = 1e-9;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed stream tags: dataset draws and solver randomness must stay distinct.
constexpr std::uint64_t kDataTag = 0xda7aULL;
constexpr std::uint64_t kSolverTag = 0x501eULL;

struct RepOutcome {
  struct One {
    bool ok = false;
    double point = 0.0;
    double se = kNaN;
    bool has_interval = false;
    bool covered = false;
  };
  std::vector<One> per_estimator;
};

RepOutcome run_one(const ExperimentSpec& spec, const DGPSpec& dgp,
                   std::size_t n_idx, int r) {
  RepOutcome out;
  out.per_estimator.resize(spec.estimators.size());
  const long n = spec.sample_sizes[n_idx];
  Dataset ds = dgp_sample(
      dgp, n,
      mix_seed({spec.seed, kDataTag, static_cast<std::uint64_t>(n_idx),
                static_cast<std::uint64_t>(r)}));
  if (ds.count_z(1) == 0 || ds.count_z(0) == 0) {
    return out;  // degenerate draw: no estimator applies
  }

  bool balance_done = false;
  RepOutcome::One balance_result;
  bool nn_done = false;
  RepOutcome::One nn_result;

  for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
    if (spec.estimators[e] == EstimatorKind::balance) {
      if (!balance_done) {
        balance_done = true;
        BasisMatrix bm = expand(ds, spec.basis);
        BalanceSpec bspec;
        bspec.delta = delta_from_policy(spec.delta, bm);
        SolverOptions sopt = spec.solver;
        sopt.seed = mix_seed({spec.seed, kSolverTag,
                              static_cast<std::uint64_t>(n_idx),
                              static_cast<std::uint64_t>(r)});
        BothDirectionsReport rep =
            solve_both_directions(ds, bm, bspec, true, MPolicy{}, sopt);
        if (rep.feasible()) {
          EstimateResult est = estimate_ate(
              ds, bm, *rep.treated_to_control.solution,
              *rep.control_to_treated.solution, spec.ci_level);
          balance_result.ok = true;
          balance_result.point = est.point;
          if (est.variance_per_obs) {
            balance_result.se = std::sqrt(*est.variance_per_obs);
          }
          if (est.ci_lo && est.ci_hi) {
            balance_result.has_interval = true;
            balance_result.covered =
                *est.ci_lo <= dgp.true_ate && dgp.true_ate <= *est.ci_hi;
          }
        }
      }
      out.per_estimator[e] = balance_result;
    } else {
      if (!nn_done) {
        nn_done = true;
        try {
          nn_result.ok = true;
          nn_result.point = ate_nn(ds, spec.nn);
        } catch (const std::invalid_argument&) {
          nn_result.ok = false;  // e.g. fewer targets than requested matches
        }
      }
      out.per_estimator[e] = nn_result;
    }
  }
  return out;
}

}  // namespace

const char* estimator_kind_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::balance:
      return "balance";
    case EstimatorKind::nn:
      return "nn";
  }
  throw std::logic_error("estimator_kind_name: unknown kind");
}

EstimatorKind estimator_kind_from_name(const std::string& name) {
  if (name == "balance") return EstimatorKind::balance;
  if (name == "nn") return EstimatorKind::nn;
  throw std::invalid_argument("unknown estimator '" + name +
                              "' (expected balance or nn)");
}

DeltaPolicy DeltaPolicy::schedule(double scale) {
  DeltaPolicy p;
  p.kind = Kind::schedule;
  p.scale = scale;
  return p;
}

DeltaPolicy DeltaPolicy::fixed(std::vector<double> values) {
  DeltaPolicy p;
  p.kind = Kind::fixed;
  p.fixed_values = std::move(values);
  return p;
}

std::vector<double> delta_from_policy(const DeltaPolicy& policy,
                                      const BasisMatrix& bm) {
  if (policy.kind == DeltaPolicy::Kind::fixed) {
    if (policy.fixed_values.size() != static_cast<std::size_t>(bm.k())) {
      throw std::invalid_argument(
          "delta_from_policy: fixed tolerance vector length must match the "
          "number of balance columns");
    }
    for (double d : policy.fixed_values) {
      if (!(d > 0.0)) {
        throw std::invalid_argument(
            "delta_from_policy: tolerances must be > 0");
      }
    }
    return policy.fixed_values;
  }
  if (!(policy.scale > 0.0) || !std::isfinite(policy.scale)) {
    throw std::invalid_argument(
        "delta_from_policy: schedule scale must be positive and finite");
  }
  const std::size_t n = bm.n();
  const double root_n = std::sqrt(static_cast<double>(n));
  std::vector<double> out(static_cast<std::size_t>(bm.k()));
  for (int k = 0; k < bm.k(); ++k) {
    double mean = bm.values.col(k).mean();
    double sd = 0.0;
    if (n >= 2) {
      double ss = (bm.values.col(k).array() - mean).square().sum();
      sd = std::sqrt(ss / static_cast<double>(n - 1));
    }
    out[static_cast<std::size_t>(k)] =
        std::max(policy.scale * sd / root_n, kDeltaFloor);
  }
  return out;
}

MCReport run_monte_carlo(const ExperimentSpec& spec) {
  if (spec.sample_sizes.empty()) {
    throw std::invalid_argument("run_monte_carlo: no sample sizes given");
  }
  for (long n : spec.sample_sizes) {
    if (n < 2) {
      throw std::invalid_argument("run_monte_carlo: sample sizes must be >= 2");
    }
  }
  if (spec.replications < 1) {
    throw std::invalid_argument("run_monte_carlo: replications must be >= 1");
  }
  if (spec.estimators.empty()) {
    throw std::invalid_argument("run_monte_carlo: no estimators given");
  }
  if (!(spec.ci_level > 0.0 && spec.ci_level < 1.0)) {
    throw std::invalid_argument("run_monte_carlo: ci_level must be in (0, 1)");
  }

  const DGPSpec dgp = dgp_by_name(spec.dgp);
  const std::size_t n_sizes = spec.sample_sizes.size();
  const std::size_t reps = static_cast<std::size_t>(spec.replications);
  const std::size_t total = n_sizes * reps;
  std::vector<RepOutcome> outcomes(total);

  auto task_for = [&](std::size_t task) {
    std::size_t n_idx = task / reps;
    int r = static_cast<int>(task % reps);
    outcomes[task] = run_one(spec, dgp, n_idx, r);
  };

  int threads = std::max(1, spec.threads);
  if (threads == 1 || total == 1) {
    for (std::size_t task = 0; task < total; ++task) task_for(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
      for (;;) {
        std::size_t task = next.fetch_add(1);
        if (task >= total) return;
        try {
          task_for(task);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    std::size_t n_workers =
        std::min(static_cast<std::size_t>(threads), total);
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  MCReport report;
  report.dgp = dgp.name;
  report.true_value = dgp.true_ate;
  for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
    for (std::size_t n_idx = 0; n_idx < n_sizes; ++n_idx) {
      MCCell cell;
      cell.estimator = estimator_kind_name(spec.estimators[e]);
      cell.n = spec.sample_sizes[n_idx];
      cell.replications = spec.replications;
      double sum_point = 0.0;
      double sum_sq_err = 0.0;
      double sum_se = 0.0;
      long n_se = 0;
      long n_cover = 0;
      long n_interval = 0;
      long n_ok = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        const RepOutcome::One& one =
            outcomes[n_idx * reps + r].per_estimator[e];
        if (!one.ok) continue;
        ++n_ok;
        sum_point += one.point;
        double err = one.point - dgp.true_ate;
        sum_sq_err += err * err;
        if (std::isfinite(one.se)) {
          sum_se += one.se;
          ++n_se;
        }
        if (one.has_interval) {
          ++n_interval;
          if (one.covered) ++n_cover;
        }
      }
      cell.infeasible = spec.replications - static_cast<int>(n_ok);
      if (n_ok > 0) {
        cell.bias = sum_point / static_cast<double>(n_ok) - dgp.true_ate;
        double mse = sum_sq_err / static_cast<double>(n_ok);
        cell.rmse = std::sqrt(mse);
        cell.sd = std::sqrt(std::max(0.0, mse - cell.bias * cell.bias));
      } else {
        cell.bias = kNaN;
        cell.rmse = kNaN;
        cell.sd = kNaN;
      }
      cell.mean_se = n_se > 0 ? sum_se / static_cast<double>(n_se) : kNaN;
      cell.coverage = n_interval > 0
                          ? static_cast<double>(n_cover) /
                                static_cast<double>(n_interval)
                          : kNaN;
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

double rate_fit(const std::vector<double>& sample_sizes,
                const std::vector<double>& rmses) {
  if (sample_sizes.size() != rmses.size()) {
    throw std::invalid_argument("rate_fit: length mismatch");
  }
  if (sample_sizes.size() < 3) {
    throw std::invalid_argument("rate_fit: need at least 3 points");
  }
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (!(sample_sizes[i] > 0.0) || !(rmses[i] > 0.0) ||
        !std::isfinite(rmses[i])) {
      throw std::invalid_argument(
          "rate_fit: sample sizes and rmses must be positive and finite");
    }
    xs.push_back(std::log(sample_sizes[i]));
    ys.push_back(std::log(rmses[i]));
  }
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(ys.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (!(sxx > 0.0)) {
    throw std::invalid_argument("rate_fit: sample sizes must not be constant");
  }
  return sxy / sxx;
}

std::string mc_report_csv(const MCReport& report) {
  std::string out =
      "estimator,n,replications,infeasible,bias,rmse,sd,mean_se,coverage\n";
  for (const MCCell& c : report.cells) {
    out += c.estimator;
    out += ',';
    out += std::to_string(c.n);
    out += ',';
    out += std::to_string(c.replications);
    out += ',';
    out += std::to_string(c.infeasible);
    out += ',';
    out += format_double(c.bias);
    out += ',';
    out += format_double(c.rmse);
    out += ',';
    out += format_double(c.sd);
    out += ',';
    out += format_double(c.mean_se);
    out += ',';
    out += format_double(c.coverage);
    out += '\n';
  }
  return out;
}

}  // namespace balmatch
