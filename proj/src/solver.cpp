#include "balmatch/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "balmatch/lp.hpp"
#include "balmatch/rng.hpp"

namespace balmatch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Interval pruning must never discard a branch the strict predicate would
// accept, so achievability windows are widened by a scale-aware epsilon.
double prune_widen(double scale) { return 1e-8 * (1.0 + std::abs(scale)); }

struct DirectionData {
  std::vector<int> source_rows;
  std::vector<int> target_rows;
  Eigen::MatrixXd tb;             // targets x K basis values
  std::vector<double> t;          // per-column source means
  std::vector<double> delta;      // per-column caps
  std::vector<int> active;        // columns with a finite cap
  long s = 0;                     // number of sources
  long c = 0;                     // number of targets
  int k = 0;
  bool with_replacement = true;
  long upper = 0;                 // per-target count cap
};

DirectionData make_direction_data(const BasisMatrix& bm,
                                  const std::vector<int>& z,
                                  const BalanceSpec& spec, Direction dir,
                                  bool with_replacement) {
  if (bm.n() != z.size()) {
    throw std::invalid_argument("solver: basis rows do not match arm flags");
  }
  if (static_cast<int>(spec.delta.size()) != bm.k()) {
    throw std::invalid_argument("solver: delta length " +
                                std::to_string(spec.delta.size()) +
                                " does not match basis columns " +
                                std::to_string(bm.k()));
  }
  for (double d : spec.delta) {
    if (!(d > 0.0)) {
      throw std::invalid_argument("solver: caps must be positive");
    }
  }
  if (!with_replacement && dir != Direction::treated_to_control) {
    throw std::invalid_argument(
        "solver: matching without replacement is supported only from the "
        "treated group into controls");
  }

  DirectionData dd;
  dd.with_replacement = with_replacement;
  const int src_z = (dir == Direction::treated_to_control) ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] != 0 && z[i] != 1) {
      throw std::invalid_argument("solver: arm flags must be 0 or 1");
    }
    if (z[i] == src_z) {
      dd.source_rows.push_back(static_cast<int>(i));
    } else {
      dd.target_rows.push_back(static_cast<int>(i));
    }
  }
  if (dd.source_rows.empty() || dd.target_rows.empty()) {
    throw std::invalid_argument("solver: empty arm");
  }
  dd.s = static_cast<long>(dd.source_rows.size());
  dd.c = static_cast<long>(dd.target_rows.size());
  dd.k = bm.k();
  dd.upper = with_replacement ? dd.s : 1;
  dd.delta = spec.delta;

  dd.tb.resize(dd.c, dd.k);
  for (long j = 0; j < dd.c; ++j) {
    dd.tb.row(j) = bm.values.row(dd.target_rows[j]);
  }
  dd.t.assign(dd.k, 0.0);
  for (int col = 0; col < dd.k; ++col) {
    double acc = 0.0;
    for (int row : dd.source_rows) acc += bm.values(row, col);
    dd.t[col] = acc / static_cast<double>(dd.s);
  }
  for (int col = 0; col < dd.k; ++col) {
    if (std::isfinite(dd.delta[col])) dd.active.push_back(col);
  }
  return dd;
}

std::vector<double> residuals_from_counts(const DirectionData& dd,
                                          const std::vector<long>& counts,
                                          long total) {
  std::vector<double> r(dd.k, 0.0);
  for (int col = 0; col < dd.k; ++col) {
    double acc = 0.0;
    for (long j = 0; j < dd.c; ++j) {
      if (counts[j] != 0) acc += static_cast<double>(counts[j]) * dd.tb(j, col);
    }
    r[col] = acc / static_cast<double>(total) - dd.t[col];
  }
  return r;
}

// Worst excess over capped columns: max_k |r_k| - delta_k. Negative values
// mean the candidate satisfies every cap with room to spare.
std::pair<double, int> worst_excess(const std::vector<double>& residuals,
                                    const std::vector<double>& delta) {
  double worst = -kInf;
  int worst_k = -1;
  for (std::size_t col = 0; col < residuals.size(); ++col) {
    if (!std::isfinite(delta[col])) continue;
    const double e = std::abs(residuals[col]) - delta[col];
    if (e > worst) {
      worst = e;
      worst_k = static_cast<int>(col);
    }
  }
  return {worst, worst_k};
}

void note_candidate(DirectionDiagnostics& diag, const DirectionData& dd,
                    const std::vector<long>& counts, long total, long m) {
  const auto r = residuals_from_counts(dd, counts, total);
  const auto [e, col] = worst_excess(r, dd.delta);
  if (col >= 0 && e < diag.best_excess) {
    diag.best_excess = e;
    diag.best_excess_column = col;
    diag.best_excess_m = m;
  }
}

// Deterministic maximally spread candidate used for diagnostics when no
// other integer candidate was evaluated.
std::vector<long> uniform_candidate(const DirectionData& dd, long q) {
  std::vector<long> c(dd.c, q / dd.c);
  long rem = q - (q / dd.c) * dd.c;
  for (long j = 0; j < rem; ++j) ++c[j];
  for (long j = 0; j < dd.c; ++j) c[j] = std::min(c[j], dd.upper);
  return c;  // may undershoot q when upper binds; diagnostics only
}

// ---------------------------------------------------------------------------
// Exact search: depth-first over count vectors with capacity and interval
// pruning. Suffix extrema are exact min/max of a bounded integer allocation.

// min (resp. max) of sum c_j * v_j over the suffix with sum c = r, 0<=c<=u.
double alloc_extreme(const std::vector<double>& vals,
                     const std::vector<double>& pre, long r, long u) {
  if (r <= 0) return 0.0;
  const long full = r / u;
  const long part = r - full * u;
  double s = static_cast<double>(u) * pre[full];
  if (part > 0) s += static_cast<double>(part) * vals[full];
  return s;
}

class ExactCountSearch {
 public:
  ExactCountSearch(const DirectionData& dd, long m)
      : dd_(dd), m_(m), q_(m * dd.s) {
    const std::size_t na = dd_.active.size();
    suffix_.resize(na);
    for (std::size_t a = 0; a < na; ++a) {
      const int col = dd_.active[a];
      auto& sx = suffix_[a];
      sx.resize(dd_.c + 1);
      std::vector<double> vals(dd_.c);
      for (long j = 0; j < dd_.c; ++j) vals[j] = dd_.tb(j, col);
      for (long j = dd_.c; j >= 0; --j) {
        std::vector<double> asc(vals.begin() + j, vals.end());
        std::sort(asc.begin(), asc.end());
        std::vector<double> desc(asc.rbegin(), asc.rend());
        auto presum = [](const std::vector<double>& v) {
          std::vector<double> p(v.size() + 1, 0.0);
          for (std::size_t i = 0; i < v.size(); ++i) p[i + 1] = p[i] + v[i];
          return p;
        };
        sx[j].asc = std::move(asc);
        sx[j].desc = std::move(desc);
        sx[j].asc_pre = presum(sx[j].asc);
        sx[j].desc_pre = presum(sx[j].desc);
      }
    }
    counts_.assign(dd_.c, 0);
    partial_.assign(dd_.active.size(), 0.0);
  }

  std::optional<std::vector<long>> run() {
    if (dd_.upper * dd_.c < q_) return std::nullopt;
    for (int col : dd_.active) {
      if (dd_.delta[col] - kBalanceSlack <= 0.0) return std::nullopt;
    }
    if (!window_possible(0, q_)) return std::nullopt;
    if (dfs(0, q_)) return counts_;
    return std::nullopt;
  }

 private:
  struct SuffixSlice {
    std::vector<double> asc, desc, asc_pre, desc_pre;
  };

  bool window_possible(long j, long rem) {
    for (std::size_t a = 0; a < dd_.active.size(); ++a) {
      const int col = dd_.active[a];
      const auto& sx = suffix_[a][j];
      const double lo =
          partial_[a] + alloc_extreme(sx.asc, sx.asc_pre, rem, dd_.upper);
      const double hi =
          partial_[a] + alloc_extreme(sx.desc, sx.desc_pre, rem, dd_.upper);
      const double w = dd_.delta[col] - kBalanceSlack;
      const double lo_norm = lo / static_cast<double>(q_) - dd_.t[col];
      const double hi_norm = hi / static_cast<double>(q_) - dd_.t[col];
      const double widen =
          prune_widen(dd_.t[col]) + 1e-8 * (std::abs(lo_norm) + std::abs(hi_norm));
      if (lo_norm >= w + widen || hi_norm <= -w - widen) return false;
    }
    return true;
  }

  bool dfs(long j, long rem) {
    if (j == dd_.c) {
      const auto r = residuals_from_counts(dd_, counts_, q_);
      return balance_ok(r, dd_.delta);
    }
    const long tail = dd_.c - j - 1;
    const long v_lo = std::max<long>(0, rem - dd_.upper * tail);
    const long v_hi = std::min<long>(dd_.upper, rem);
    if (v_lo > v_hi) return false;
    // Explore values nearest the even split first.
    const long slots = dd_.c - j;
    long base = (2 * rem + slots) / (2 * slots);
    base = std::clamp(base, v_lo, v_hi);
    for (long step = 0;; ++step) {
      bool any = false;
      for (int sgn = 0; sgn < 2; ++sgn) {
        if (step == 0 && sgn == 1) continue;
        const long v = (sgn == 0) ? base + step : base - step;
        if (v < v_lo || v > v_hi) continue;
        any = true;
        counts_[j] = v;
        for (std::size_t a = 0; a < dd_.active.size(); ++a) {
          partial_[a] += static_cast<double>(v) * dd_.tb(j, dd_.active[a]);
        }
        const bool ok = window_possible(j + 1, rem - v) && dfs(j + 1, rem - v);
        if (ok) return true;  // keep counts_ as the found solution
        for (std::size_t a = 0; a < dd_.active.size(); ++a) {
          partial_[a] -= static_cast<double>(v) * dd_.tb(j, dd_.active[a]);
        }
        counts_[j] = 0;
      }
      if (!any && base + step > v_hi && base - step < v_lo) break;
    }
    return false;
  }

  const DirectionData& dd_;
  long m_;
  long q_;
  std::vector<std::vector<SuffixSlice>> suffix_;
  std::vector<long> counts_;
  std::vector<double> partial_;
};

// ---------------------------------------------------------------------------
// LP relaxation in match-share units v_j = c_j / q, so every quantity is
// O(1): sum v = 1, 0 <= v_j <= upper/q, and each capped column contributes a
// ranged row implemented with a bounded slack.

struct LpBuild {
  LpProblem problem;
  std::vector<double> row_scale;  // per active column
};

LpBuild build_lp(const DirectionData& dd, long q,
                 const std::vector<double>& caps) {
  const int na = static_cast<int>(dd.active.size());
  const int nvar = static_cast<int>(dd.c) + na;
  LpBuild out;
  out.problem.a = Eigen::MatrixXd::Zero(na + 1, nvar);
  out.problem.b = Eigen::VectorXd::Zero(na + 1);
  out.problem.upper = Eigen::VectorXd::Constant(nvar, kInf);
  out.row_scale.assign(na, 1.0);

  const double vcap = static_cast<double>(dd.upper) / static_cast<double>(q);
  for (long j = 0; j < dd.c; ++j) out.problem.upper(j) = vcap;

  for (int a = 0; a < na; ++a) {
    const int col = dd.active[a];
    double scale = std::max(1.0, std::abs(dd.t[col]));
    for (long j = 0; j < dd.c; ++j) {
      scale = std::max(scale, std::abs(dd.tb(j, col)));
    }
    out.row_scale[a] = scale;
    const double w = caps[col];
    for (long j = 0; j < dd.c; ++j) {
      out.problem.a(a, j) = dd.tb(j, col) / scale;
    }
    out.problem.a(a, static_cast<int>(dd.c) + a) = 1.0;      // slack
    out.problem.b(a) = (dd.t[col] + w) / scale;
    out.problem.upper(static_cast<int>(dd.c) + a) = 2.0 * w / scale;
  }
  for (long j = 0; j < dd.c; ++j) out.problem.a(na, j) = 1.0;
  out.problem.b(na) = 1.0;

  // Crash start: an evenly spread set of q / upper shares at their cap sums
  // to exactly 1, so the simplex only has to repair the balance rows.
  const long crash = q / dd.upper;
  if (crash >= 1 && crash <= dd.c) {
    out.problem.start_at_upper.reserve(static_cast<std::size_t>(crash));
    for (long i = 0; i < crash; ++i) {
      out.problem.start_at_upper.push_back(
          static_cast<int>((i * dd.c) / crash));
    }
  }
  return out;
}

std::vector<double> shrunk_caps(const DirectionData& dd, double margin) {
  std::vector<double> caps(dd.k, kInf);
  for (int col : dd.active) {
    caps[col] = (dd.delta[col] - kBalanceSlack) * (1.0 - margin);
  }
  return caps;
}

std::vector<double> full_caps(const DirectionData& dd) {
  return shrunk_caps(dd, 0.0);
}

struct RepairContext {
  // Targets ordered by basis value, one ordering per active column.
  std::vector<std::vector<int>> order;
};

RepairContext make_repair_context(const DirectionData& dd) {
  RepairContext rc;
  rc.order.resize(dd.active.size());
  for (std::size_t a = 0; a < dd.active.size(); ++a) {
    const int col = dd.active[a];
    auto& ord = rc.order[a];
    ord.resize(dd.c);
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](int lhs, int rhs) {
      return dd.tb(lhs, col) < dd.tb(rhs, col);
    });
  }
  return rc;
}

class IntegerRepair {
 public:
  IntegerRepair(const DirectionData& dd, const RepairContext& rc, long q)
      : dd_(dd), rc_(rc), q_(q) {}

  void set_counts(std::vector<long> counts) {
    counts_ = std::move(counts);
    dot_.assign(dd_.active.size(), 0.0);
    sum_ = 0;
    for (long j = 0; j < dd_.c; ++j) {
      sum_ += counts_[j];
      if (counts_[j] == 0) continue;
      for (std::size_t a = 0; a < dd_.active.size(); ++a) {
        dot_[a] +=
            static_cast<double>(counts_[j]) * dd_.tb(j, dd_.active[a]);
      }
    }
  }

  const std::vector<long>& counts() const { return counts_; }
  long sum() const { return sum_; }

  double excess_if(const std::vector<double>& dot) const {
    double worst = -kInf;
    for (std::size_t a = 0; a < dd_.active.size(); ++a) {
      const int col = dd_.active[a];
      const double r = dot[a] / static_cast<double>(q_) - dd_.t[col];
      worst = std::max(worst, std::abs(r) - (dd_.delta[col] - kBalanceSlack));
    }
    return worst;
  }

  double current_excess() const { return excess_if(dot_); }

  // Adjust the total to q by greedy single steps that keep the worst excess
  // as small as possible.
  void fix_sum() {
    while (sum_ != q_) {
      const int sgn = (sum_ < q_) ? 1 : -1;
      int best_j = -1;
      double best = kInf;
      std::vector<double> trial(dot_.size());
      for (long j = 0; j < dd_.c; ++j) {
        if (sgn > 0 && counts_[j] >= dd_.upper) continue;
        if (sgn < 0 && counts_[j] <= 0) continue;
        for (std::size_t a = 0; a < dd_.active.size(); ++a) {
          trial[a] = dot_[a] + sgn * dd_.tb(j, dd_.active[a]);
        }
        const double e = excess_if(trial);
        if (e < best) {
          best = e;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j < 0) return;  // no legal step; caller re-checks feasibility
      apply_step(best_j, sgn);
    }
  }

  // Sum-preserving transfer repair; returns true when the strict predicate
  // holds on exit.
  bool repair(Rng& rng, int max_iters) {
    for (int iter = 0; iter < max_iters; ++iter) {
      double worst = -kInf;
      std::size_t worst_a = 0;
      double worst_r = 0.0;
      for (std::size_t a = 0; a < dd_.active.size(); ++a) {
        const int col = dd_.active[a];
        const double r = dot_[a] / static_cast<double>(q_) - dd_.t[col];
        const double e = std::abs(r) - (dd_.delta[col] - kBalanceSlack);
        if (e > worst) {
          worst = e;
          worst_a = a;
          worst_r = r;
        }
      }
      if (worst < 0.0) return true;

      // Residual too high: move a match from a high-value target to a
      // low-value one (and conversely), judged on the offending column.
      const auto& ord = rc_.order[worst_a];
      std::vector<int> donors;
      std::vector<int> receivers;
      collect_candidates(ord, worst_r > 0.0, rng, donors, receivers);
      int best_d = -1;
      int best_rcv = -1;
      double best = current_excess();
      std::vector<double> trial(dot_.size());
      for (int d : donors) {
        for (int rcv : receivers) {
          if (d == rcv) continue;
          for (std::size_t a = 0; a < dd_.active.size(); ++a) {
            trial[a] = dot_[a] + dd_.tb(rcv, dd_.active[a]) -
                       dd_.tb(d, dd_.active[a]);
          }
          const double e = excess_if(trial);
          if (e < best - 1e-15) {
            best = e;
            best_d = d;
            best_rcv = rcv;
          }
        }
      }
      if (best_d < 0) return false;  // no improving transfer
      apply_step(best_d, -1);
      apply_step(best_rcv, +1);
    }
    return current_excess() < 0.0;
  }

 private:
  void apply_step(int j, int sgn) {
    counts_[j] += sgn;
    sum_ += sgn;
    for (std::size_t a = 0; a < dd_.active.size(); ++a) {
      dot_[a] += sgn * dd_.tb(j, dd_.active[a]);
    }
  }

  void collect_candidates(const std::vector<int>& ord, bool too_high, Rng& rng,
                          std::vector<int>& donors,
                          std::vector<int>& receivers) {
    donors.clear();
    receivers.clear();
    constexpr int kEdge = 8;
    constexpr int kRandom = 4;
    // Donors give up a match (count > 0); receivers take one (count < cap).
    // When the residual is too high, donors come from the high end of the
    // column ordering and receivers from the low end.
    auto scan = [&](bool from_high, bool donor, std::vector<int>& out) {
      const long n = static_cast<long>(ord.size());
      for (long step = 0; step < n && static_cast<int>(out.size()) < kEdge;
           ++step) {
        const int j = from_high ? ord[n - 1 - step] : ord[step];
        if (donor ? (counts_[j] > 0) : (counts_[j] < dd_.upper)) {
          out.push_back(j);
        }
      }
    };
    scan(too_high, true, donors);
    scan(!too_high, false, receivers);
    for (int i = 0; i < kRandom; ++i) {
      const int j1 = static_cast<int>(rng.below(ord.size()));
      if (counts_[j1] > 0) donors.push_back(j1);
      const int j2 = static_cast<int>(rng.below(ord.size()));
      if (counts_[j2] < dd_.upper) receivers.push_back(j2);
    }
  }

  const DirectionData& dd_;
  const RepairContext& rc_;
  long q_;
  std::vector<long> counts_;
  std::vector<double> dot_;
  long sum_ = 0;
};

enum class ProbeStatus { found, absent_certified, absent_heuristic };

struct ProbeResult {
  ProbeStatus status = ProbeStatus::absent_heuristic;
  std::vector<long> counts;
};

// One heuristic probe at fixed multiplicity. lp_known_feasible skips the
// certification LP when the caller already solved it (frontier search);
// relax_hint is a relaxation point known feasible at this or a larger
// multiplicity, tried before solving any fresh relaxation.
ProbeResult heuristic_probe(const DirectionData& dd, const RepairContext& rc,
                            long m, const SolverOptions& opt,
                            DirectionDiagnostics& diag,
                            bool lp_known_feasible,
                            const Eigen::VectorXd* relax_hint = nullptr) {
  const long q = m * dd.s;
  ProbeResult out;
  if (dd.upper * dd.c < q) {
    out.status = ProbeStatus::absent_certified;
    return out;
  }
  for (int col : dd.active) {
    if (dd.delta[col] - kBalanceSlack <= 0.0) {
      out.status = ProbeStatus::absent_certified;
      return out;
    }
  }

  IntegerRepair rep(dd, rc, q);
  Rng rng(mix_seed({opt.seed, 0x726e64ULL, static_cast<std::uint64_t>(m)}));
  auto try_rounding = [&](const Eigen::VectorXd& relax) {
    for (int attempt = 0; attempt < std::max(1, opt.rounding_attempts);
         ++attempt) {
      std::vector<long> counts(dd.c, 0);
      for (long j = 0; j < dd.c; ++j) {
        const double target = relax(j) * static_cast<double>(q);
        long base = static_cast<long>(std::floor(target + 1e-9));
        base = std::clamp<long>(base, 0, dd.upper);
        const double frac =
            std::clamp(target - static_cast<double>(base), 0.0, 1.0);
        long v = base;
        if (v < dd.upper && rng.bernoulli(frac)) ++v;
        counts[j] = v;
      }
      rep.set_counts(std::move(counts));
      rep.fix_sum();
      note_candidate(diag, dd, rep.counts(), q, m);
      bool ok = rep.sum() == q && rep.current_excess() < 0.0;
      if (!ok && rep.sum() == q) ok = rep.repair(rng, opt.repair_max_iters);
      note_candidate(diag, dd, rep.counts(), q, m);
      if (ok) {
        const auto r = residuals_from_counts(dd, rep.counts(), q);
        if (balance_ok(r, dd.delta)) return true;
      }
    }
    return false;
  };

  if (relax_hint != nullptr && try_rounding(*relax_hint)) {
    out.status = ProbeStatus::found;
    out.counts = rep.counts();
    return out;
  }

  if (opt.lp_margin > 0.0) {
    const auto built = build_lp(dd, q, shrunk_caps(dd, opt.lp_margin));
    const auto res = lp_find_feasible(built.problem);
    if (res.status == LpStatus::feasible &&
        try_rounding(res.x.head(dd.c))) {
      out.status = ProbeStatus::found;
      out.counts = rep.counts();
      return out;
    }
  }

  {
    const auto built = build_lp(dd, q, full_caps(dd));
    const auto res = lp_find_feasible(built.problem);
    if (res.status == LpStatus::infeasible && !lp_known_feasible) {
      out.status = ProbeStatus::absent_certified;
      return out;
    }
    if (res.status != LpStatus::feasible) {
      out.status = ProbeStatus::absent_heuristic;
      note_candidate(diag, dd, uniform_candidate(dd, q), q, m);
      return out;
    }
    if (try_rounding(res.x.head(dd.c))) {
      out.status = ProbeStatus::found;
      out.counts = rep.counts();
      return out;
    }
  }
  out.status = ProbeStatus::absent_heuristic;
  return out;
}

ProbeResult exact_probe(const DirectionData& dd, long m,
                        DirectionDiagnostics& diag) {
  const long q = m * dd.s;
  ProbeResult out;
  ExactCountSearch search(dd, m);
  auto counts = search.run();
  if (counts.has_value()) {
    note_candidate(diag, dd, *counts, q, m);
    out.status = ProbeStatus::found;
    out.counts = std::move(*counts);
  } else {
    note_candidate(diag, dd, uniform_candidate(dd, q), q, m);
    out.status = ProbeStatus::absent_certified;
  }
  return out;
}

// Decides relaxation feasibility at multiplicity m; on success optionally
// hands back the feasible point (in share units, so it stays feasible for
// every smaller multiplicity).
bool lp_feasible_at(const DirectionData& dd, long m, bool& stalled,
                    Eigen::VectorXd* x_out = nullptr) {
  const long q = m * dd.s;
  if (dd.upper * dd.c < q) return false;
  const auto built = build_lp(dd, q, full_caps(dd));
  const auto res = lp_find_feasible(built.problem);
  if (res.status == LpStatus::stalled) {
    stalled = true;
    return false;
  }
  if (res.status == LpStatus::feasible && x_out != nullptr) {
    *x_out = res.x.head(dd.c);
  }
  return res.status == LpStatus::feasible;
}

}  // namespace

std::string direction_name(Direction dir) {
  return dir == Direction::treated_to_control ? "treated_to_control"
                                              : "control_to_treated";
}

bool balance_ok(const std::vector<double>& residuals,
                const std::vector<double>& delta) {
  if (residuals.size() != delta.size()) {
    throw std::invalid_argument("balance_ok: length mismatch");
  }
  for (std::size_t col = 0; col < residuals.size(); ++col) {
    if (!std::isfinite(delta[col])) continue;
    if (!(std::abs(residuals[col]) < delta[col] - kBalanceSlack)) return false;
  }
  return true;
}

long max_multiplicity(long n_sources, long n_targets, bool with_replacement) {
  if (n_sources <= 0 || n_targets <= 0) {
    throw std::invalid_argument("max_multiplicity: empty arm");
  }
  return with_replacement ? n_targets : n_targets / n_sources;
}

std::vector<double> count_residuals(const BasisMatrix& bm,
                                    const std::vector<int>& source_rows,
                                    const std::vector<int>& target_rows,
                                    const CountVector& cv) {
  if (cv.counts.size() != target_rows.size()) {
    throw std::invalid_argument("count_residuals: counts/targets mismatch");
  }
  const int k = bm.k();
  std::vector<double> r(k, 0.0);
  for (int col = 0; col < k; ++col) {
    double t = 0.0;
    for (int row : source_rows) t += bm.values(row, col);
    t /= static_cast<double>(source_rows.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < target_rows.size(); ++j) {
      if (cv.counts[j] != 0) {
        acc += static_cast<double>(cv.counts[j]) *
               bm.values(target_rows[j], col);
      }
    }
    r[col] = acc / static_cast<double>(cv.total) - t;
  }
  return r;
}

std::vector<double> pair_residuals(const BasisMatrix& bm,
                                   const MatchSolution& sol) {
  const int k = bm.k();
  std::vector<double> r(k, 0.0);
  const auto npairs = static_cast<double>(sol.pairs.size());
  if (sol.pairs.empty()) {
    throw std::invalid_argument("pair_residuals: empty solution");
  }
  for (int col = 0; col < k; ++col) {
    double acc = 0.0;
    for (const MatchPair& p : sol.pairs) {
      acc += bm.values(p.target_row, col) - bm.values(p.source_row, col);
    }
    r[col] = acc / npairs;
  }
  return r;
}

std::optional<CountVector> feasible_counts(const BasisMatrix& bm,
                                           const std::vector<int>& z,
                                           const BalanceSpec& spec,
                                           Direction dir, long m,
                                           bool with_replacement,
                                           const SolverOptions& opt) {
  if (m < 1) throw std::invalid_argument("feasible_counts: m must be >= 1");
  const auto dd = make_direction_data(bm, z, spec, dir, with_replacement);
  if (m > max_multiplicity(dd.s, dd.c, with_replacement)) return std::nullopt;
  DirectionDiagnostics diag;
  ProbeResult probe;
  if (!opt.force_heuristic && dd.c <= opt.exact_limit) {
    probe = exact_probe(dd, m, diag);
  } else {
    const auto rc = make_repair_context(dd);
    probe = heuristic_probe(dd, rc, m, opt, diag, false);
  }
  if (probe.status != ProbeStatus::found) return std::nullopt;
  CountVector cv;
  cv.counts = std::move(probe.counts);
  cv.total = m * dd.s;
  return cv;
}

MatchSolution realize_assignment(const CountVector& cv,
                                 const std::vector<int>& source_rows,
                                 const std::vector<int>& target_rows, long m,
                                 Direction dir, bool with_replacement) {
  const long s = static_cast<long>(source_rows.size());
  const long c = static_cast<long>(target_rows.size());
  if (s < 1 || c < 1) {
    throw std::invalid_argument("realize_assignment: empty arm");
  }
  if (m < 1) throw std::invalid_argument("realize_assignment: m must be >= 1");
  if (static_cast<long>(cv.counts.size()) != c) {
    throw std::invalid_argument("realize_assignment: counts/targets mismatch");
  }
  long sum = 0;
  for (long j = 0; j < c; ++j) {
    const long cap = with_replacement ? s : 1;
    if (cv.counts[j] < 0 || cv.counts[j] > cap) {
      throw std::invalid_argument(
          "realize_assignment: count out of range at target " +
          std::to_string(j));
    }
    sum += cv.counts[j];
  }
  if (sum != m * s || cv.total != m * s) {
    throw std::invalid_argument(
        "realize_assignment: counts must sum to m * sources");
  }

  MatchSolution sol;
  sol.direction = dir;
  sol.with_replacement = with_replacement;
  sol.m_value = m;
  sol.source_rows = source_rows;
  sol.target_rows = target_rows;
  sol.pairs.reserve(static_cast<std::size_t>(sum));
  // Round-robin dealing: copies of target j occupy consecutive positions,
  // positions are dealt to sources cyclically. Copies of one target are at
  // most s - 1 apart, so no source sees the same target twice, and every
  // source receives exactly m targets.
  long pos = 0;
  for (long j = 0; j < c; ++j) {
    for (long rep = 0; rep < cv.counts[j]; ++rep) {
      const long src = pos % s;
      sol.pairs.push_back(MatchPair{source_rows[src], target_rows[j]});
      ++pos;
    }
  }
  return sol;
}

SolveReport solve_balance_match(const Dataset& ds, const BasisMatrix& bm,
                                const BalanceSpec& spec, Direction dir,
                                bool with_replacement, const MPolicy& policy,
                                const SolverOptions& opt) {
  if (bm.n() != ds.n()) {
    throw std::invalid_argument("solve_balance_match: basis/dataset mismatch");
  }
  std::vector<int> z(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) z[i] = ds.units[i].z;
  const auto dd = make_direction_data(bm, z, spec, dir, with_replacement);

  SolveReport rep;
  rep.diag.direction = dir;

  const long m_max = max_multiplicity(dd.s, dd.c, with_replacement);
  long m_hi = 0;
  long m_lo = 1;
  switch (policy.kind) {
    case MPolicy::Kind::maximize:
      m_hi = m_max;
      break;
    case MPolicy::Kind::fixed:
      if (policy.m < 1) {
        throw std::invalid_argument("solve_balance_match: fixed m must be >= 1");
      }
      m_hi = policy.m;
      m_lo = policy.m;
      break;
    case MPolicy::Kind::largest_at_most:
      if (policy.m < 1) {
        throw std::invalid_argument("solve_balance_match: m cap must be >= 1");
      }
      m_hi = std::min(policy.m, m_max);
      break;
  }
  if (m_hi < m_lo || m_max < 1) {
    rep.diag.certified_absent = true;  // structurally impossible
    rep.diag.exact = true;
    return rep;
  }
  if (policy.kind == MPolicy::Kind::fixed && policy.m > m_max) {
    rep.diag.certified_absent = true;
    rep.diag.exact = true;
    return rep;
  }

  const bool exact_mode = !opt.force_heuristic && dd.c <= opt.exact_limit;
  rep.diag.exact = exact_mode;

  auto finish_found = [&](long m, std::vector<long> counts) {
    CountVector cv;
    cv.counts = std::move(counts);
    cv.total = m * dd.s;
    rep.solution = realize_assignment(cv, dd.source_rows, dd.target_rows, m,
                                      dir, with_replacement);
    rep.diag.feasible = true;
    rep.diag.m_value = m;
  };

  if (exact_mode) {
    for (long m = m_hi; m >= m_lo; --m) {
      ++rep.diag.probes;
      auto probe = exact_probe(dd, m, rep.diag);
      if (probe.status == ProbeStatus::found) {
        finish_found(m, std::move(probe.counts));
        return rep;
      }
    }
    rep.diag.certified_absent = true;
    return rep;
  }

  // Heuristic path. The relaxation's feasible multiplicities form a prefix
  // {1..frontier}: shrinking m only loosens the per-target share cap while
  // the balance rows stay unchanged, so relaxation feasibility is monotone.
  const auto rc = make_repair_context(dd);
  bool stalled = false;
  long frontier = 0;
  Eigen::VectorXd frontier_x;
  bool have_frontier_x = false;
  if (policy.kind == MPolicy::Kind::fixed) {
    frontier = m_hi;  // single probe below, certification handled there
  } else {
    if (lp_feasible_at(dd, m_hi, stalled, &frontier_x)) {
      frontier = m_hi;
      have_frontier_x = true;
    } else if (!lp_feasible_at(dd, 1, stalled, &frontier_x)) {
      rep.diag.probes = 1;
      rep.diag.certified_absent = !stalled;
      note_candidate(rep.diag, dd, uniform_candidate(dd, dd.s), dd.s, 1);
      return rep;
    } else {
      have_frontier_x = true;
      long lo = 1;
      long hi = m_hi - 1;
      while (lo < hi) {
        const long mid = lo + (hi - lo + 1) / 2;
        // The point from the last feasible probe belongs to lo itself, the
        // largest multiplicity proven feasible so far.
        if (lp_feasible_at(dd, mid, stalled, &frontier_x)) {
          lo = mid;
        } else {
          hi = mid - 1;
        }
      }
      frontier = lo;
    }
  }

  bool all_certified = true;
  for (long m = frontier; m >= m_lo; --m) {
    ++rep.diag.probes;
    auto probe =
        heuristic_probe(dd, rc, m, opt, rep.diag,
                        policy.kind != MPolicy::Kind::fixed,
                        have_frontier_x ? &frontier_x : nullptr);
    if (probe.status == ProbeStatus::found) {
      finish_found(m, std::move(probe.counts));
      return rep;
    }
    if (probe.status != ProbeStatus::absent_certified) all_certified = false;
  }
  // Unless every probe was individually certified, the relaxation was
  // feasible somewhere while rounding failed, so absence of an integer
  // solution is heuristic, not proven.
  rep.diag.certified_absent = all_certified && !stalled;
  return rep;
}

BothDirectionsReport solve_both_directions(const Dataset& ds,
                                           const BasisMatrix& bm,
                                           const BalanceSpec& spec,
                                           bool with_replacement,
                                           const MPolicy& policy,
                                           const SolverOptions& opt) {
  if (!with_replacement) {
    throw std::invalid_argument(
        "solve_both_directions: matching without replacement is only "
        "supported one-directionally (treated into controls)");
  }
  BothDirectionsReport rep;
  SolverOptions opt_tc = opt;
  opt_tc.seed = mix_seed({opt.seed, 1});
  SolverOptions opt_ct = opt;
  opt_ct.seed = mix_seed({opt.seed, 2});
  rep.treated_to_control =
      solve_balance_match(ds, bm, spec, Direction::treated_to_control,
                          with_replacement, policy, opt_tc);
  rep.control_to_treated =
      solve_balance_match(ds, bm, spec, Direction::control_to_treated,
                          with_replacement, policy, opt_ct);
  return rep;
}

// ---------------------------------------------------------------------------
// Reference oracle: enumerate assignment matrices directly. Each source in
// turn picks an m-subset of targets (subject to single-use constraints when
// matching without replacement); balance is evaluated from the pair sums.

namespace {

struct OracleContext {
  Eigen::MatrixXd sb;  // sources x K
  Eigen::MatrixXd tb;  // targets x K
  std::vector<double> delta;
  std::vector<int> active;
  long s = 0;
  long c = 0;
  long m = 0;
  bool with_replacement = true;
  // Static subset-sum extrema per active column.
  std::vector<double> min_subset;  // sum of m smallest target values
  std::vector<double> max_subset;
  std::vector<std::vector<double>> src_suffix;  // per active: suffix sums
  std::vector<char> used;                       // single-use mask
  std::vector<double> partial;                  // per active column
  std::vector<std::vector<int>> assignment;     // chosen targets per source
};

bool oracle_leaf_ok(OracleContext& cx) {
  const double npairs = static_cast<double>(cx.m * cx.s);
  std::vector<double> r(cx.delta.size(), 0.0);
  for (std::size_t col = 0; col < cx.delta.size(); ++col) {
    double acc = 0.0;
    for (long i = 0; i < cx.s; ++i) {
      for (int j : cx.assignment[i]) {
        acc += cx.sb(i, col) - cx.tb(j, col);
      }
    }
    r[col] = acc / npairs;
  }
  return balance_ok(r, cx.delta);
}

bool oracle_window_possible(OracleContext& cx, long next_source) {
  const long rem = cx.s - next_source;
  const double npairs = static_cast<double>(cx.m * cx.s);
  for (std::size_t a = 0; a < cx.active.size(); ++a) {
    const int col = cx.active[a];
    const double src_rest =
        static_cast<double>(cx.m) * cx.src_suffix[a][next_source];
    const double lo = cx.partial[a] + src_rest -
                      static_cast<double>(rem) * cx.max_subset[a];
    const double hi = cx.partial[a] + src_rest -
                      static_cast<double>(rem) * cx.min_subset[a];
    const double w = cx.delta[col] - kBalanceSlack;
    const double lo_norm = lo / npairs;
    const double hi_norm = hi / npairs;
    const double widen =
        prune_widen(0.0) + 1e-8 * (std::abs(lo_norm) + std::abs(hi_norm));
    if (lo_norm >= w + widen || hi_norm <= -w - widen) return false;
  }
  return true;
}

bool oracle_source_dfs(OracleContext& cx, long source);

// Choose the remaining part of source's m-subset starting at target index
// `from` with `left` picks outstanding.
bool oracle_combo_dfs(OracleContext& cx, long source, long from, long left) {
  if (left == 0) {
    if (!oracle_window_possible(cx, source + 1)) return false;
    return oracle_source_dfs(cx, source + 1);
  }
  for (long j = from; j <= cx.c - left; ++j) {
    if (!cx.with_replacement && cx.used[j]) continue;
    cx.assignment[source].push_back(static_cast<int>(j));
    if (!cx.with_replacement) cx.used[j] = 1;
    for (std::size_t a = 0; a < cx.active.size(); ++a) {
      cx.partial[a] += cx.sb(source, cx.active[a]) - cx.tb(j, cx.active[a]);
    }
    const bool ok = oracle_combo_dfs(cx, source, j + 1, left - 1);
    for (std::size_t a = 0; a < cx.active.size(); ++a) {
      cx.partial[a] -= cx.sb(source, cx.active[a]) - cx.tb(j, cx.active[a]);
    }
    if (!cx.with_replacement) cx.used[j] = 0;
    cx.assignment[source].pop_back();
    if (ok) return true;
  }
  return false;
}

bool oracle_source_dfs(OracleContext& cx, long source) {
  if (source == cx.s) return oracle_leaf_ok(cx);
  cx.assignment[source].clear();
  return oracle_combo_dfs(cx, source, 0, cx.m);
}

}  // namespace

bool oracle_feasible_m(const BasisMatrix& bm, const std::vector<int>& z,
                       const BalanceSpec& spec, Direction dir, long m,
                       bool with_replacement) {
  if (m < 1) return false;
  const auto dd = make_direction_data(bm, z, spec, dir, with_replacement);
  if (m > max_multiplicity(dd.s, dd.c, with_replacement)) return false;
  for (int col : dd.active) {
    if (dd.delta[col] - kBalanceSlack <= 0.0) return false;
  }

  OracleContext cx;
  cx.s = dd.s;
  cx.c = dd.c;
  cx.m = m;
  cx.with_replacement = with_replacement;
  cx.delta = dd.delta;
  cx.active = dd.active;
  cx.tb = dd.tb;
  cx.sb.resize(dd.s, dd.k);
  for (long i = 0; i < dd.s; ++i) {
    cx.sb.row(i) = bm.values.row(dd.source_rows[i]);
  }
  cx.min_subset.resize(cx.active.size());
  cx.max_subset.resize(cx.active.size());
  cx.src_suffix.resize(cx.active.size());
  for (std::size_t a = 0; a < cx.active.size(); ++a) {
    const int col = cx.active[a];
    std::vector<double> vals(dd.c);
    for (long j = 0; j < dd.c; ++j) vals[j] = cx.tb(j, col);
    std::sort(vals.begin(), vals.end());
    double lo = 0.0;
    double hi = 0.0;
    for (long i = 0; i < m; ++i) {
      lo += vals[i];
      hi += vals[dd.c - 1 - i];
    }
    cx.min_subset[a] = lo;
    cx.max_subset[a] = hi;
    auto& suf = cx.src_suffix[a];
    suf.assign(dd.s + 1, 0.0);
    for (long i = dd.s - 1; i >= 0; --i) {
      suf[i] = suf[i + 1] + cx.sb(i, col);
    }
  }
  cx.used.assign(dd.c, 0);
  cx.partial.assign(cx.active.size(), 0.0);
  cx.assignment.assign(dd.s, {});
  if (!with_replacement && m * dd.s > dd.c) return false;
  if (!oracle_window_possible(cx, 0)) return false;
  return oracle_source_dfs(cx, 0);
}

std::optional<long> oracle_max_m(const BasisMatrix& bm,
                                 const std::vector<int>& z,
                                 const BalanceSpec& spec, Direction dir,
                                 bool with_replacement) {
  const auto dd = make_direction_data(bm, z, spec, dir, with_replacement);
  const long m_max = max_multiplicity(dd.s, dd.c, with_replacement);
  for (long m = m_max; m >= 1; --m) {
    if (oracle_feasible_m(bm, z, spec, dir, m, with_replacement)) return m;
  }
  return std::nullopt;
}

}  // namespace balmatch
