// balmatch: covariate-balance matching, effect estimation, and diagnostics.
//
// Subcommands: match, estimate, simulate, diagnose, oracle. Every JSON
// report embeds the artifact version, the seed, and an echo of the resolved
// configuration; reruns with identical configuration produce byte-identical
// outputs. Exit codes: 0 success/feasible, 2 infeasible, 1 usage or IO
// error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "balmatch/basis.hpp"
#include "balmatch/dataset.hpp"
#include "balmatch/estimator.hpp"
#include "balmatch/feasibility.hpp"
#include "balmatch/nn.hpp"
#include "balmatch/simlab.hpp"
#include "balmatch/solver.hpp"
#include "balmatch/weights.hpp"

namespace {

using balmatch::BalanceSpec;
using balmatch::BasisMatrix;
using balmatch::BasisSpec;
using balmatch::Dataset;
using balmatch::Direction;
using balmatch::MatchSolution;
using balmatch::MPolicy;
using balmatch::SolverOptions;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Small utilities

json finite_or_null(double v) {
  if (std::isfinite(v)) return json(v);
  return json();  // null
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

double parse_double_token(const std::string& tok, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw UsageError(what + ": cannot parse '" + tok + "' as a number");
  }
}

long parse_long_token(const std::string& tok, const std::string& what) {
  try {
    std::size_t used = 0;
    long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw UsageError(what + ": cannot parse '" + tok + "' as an integer");
  }
}

std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& what) {
  std::vector<double> out;
  for (const auto& tok : split_list(text)) {
    out.push_back(parse_double_token(tok, what));
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

std::vector<long> parse_long_list(const std::string& text,
                                  const std::string& what) {
  std::vector<long> out;
  for (const auto& tok : split_list(text)) {
    out.push_back(parse_long_token(tok, what));
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

void write_text_file(const std::string& dir, const std::string& name,
                     const std::string& content) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file " + path.string());
  out << content;
  if (!out) throw std::runtime_error("cannot write output file " + path.string());
}

// ---------------------------------------------------------------------------
// Option plumbing. One flat option set shared by the subcommands; an
// optional JSON config file provides defaults and explicit flags override.

struct Options {
  std::string input;
  std::string basis = "raw";
  std::string delta;               // fixed tolerances, comma separated
  double delta_schedule = 0.5;     // schedule scale when no fixed list
  std::string direction = "both";  // both | treated-to-control | control-to-treated
  std::string replacement = "with";
  std::string m_policy = "maximize";
  std::string estimand = "ate";
  double level = 0.95;
  bool no_tie_average = false;
  std::string matches;  // estimate: reuse a previously written matches file
  std::uint64_t seed = 0;
  std::string out;  // output directory; empty = stdout only
  int threads = 1;
  int exact_limit = 12;
  // simulate
  std::string dgp = "dgp-a";
  std::string estimators = "balance";
  std::string sample_sizes;
  int replications = 100;
  // diagnose
  double rho = -1.0;
  double delta0 = 0.1;
  int k_columns = 0;
  long n_obs = 0;
  std::string pi_list;
  double r_pi = 2.0;
  double c_const = 1.0;
  double box_side_scale = 1.0;
  long box_budget = 200000;
};

void apply_config_file(const std::string& path, Options& o) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json cfg;
  try {
    in >> cfg;
  } catch (const std::exception& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold an object");
  std::map<std::string, std::function<void(const json&)>> setters = {
      {"input", [&](const json& v) { o.input = v.get<std::string>(); }},
      {"basis", [&](const json& v) { o.basis = v.get<std::string>(); }},
      {"delta", [&](const json& v) { o.delta = v.get<std::string>(); }},
      {"delta-schedule",
       [&](const json& v) { o.delta_schedule = v.get<double>(); }},
      {"direction", [&](const json& v) { o.direction = v.get<std::string>(); }},
      {"replacement",
       [&](const json& v) { o.replacement = v.get<std::string>(); }},
      {"m-policy", [&](const json& v) { o.m_policy = v.get<std::string>(); }},
      {"estimand", [&](const json& v) { o.estimand = v.get<std::string>(); }},
      {"level", [&](const json& v) { o.level = v.get<double>(); }},
      {"no-tie-average",
       [&](const json& v) { o.no_tie_average = v.get<bool>(); }},
      {"matches", [&](const json& v) { o.matches = v.get<std::string>(); }},
      {"seed", [&](const json& v) { o.seed = v.get<std::uint64_t>(); }},
      {"out", [&](const json& v) { o.out = v.get<std::string>(); }},
      {"threads", [&](const json& v) { o.threads = v.get<int>(); }},
      {"exact-limit", [&](const json& v) { o.exact_limit = v.get<int>(); }},
      {"dgp", [&](const json& v) { o.dgp = v.get<std::string>(); }},
      {"estimators",
       [&](const json& v) { o.estimators = v.get<std::string>(); }},
      {"n", [&](const json& v) { o.sample_sizes = v.get<std::string>(); }},
      {"replications",
       [&](const json& v) { o.replications = v.get<int>(); }},
      {"rho", [&](const json& v) { o.rho = v.get<double>(); }},
      {"delta0", [&](const json& v) { o.delta0 = v.get<double>(); }},
      {"k", [&](const json& v) { o.k_columns = v.get<int>(); }},
      {"n-obs", [&](const json& v) { o.n_obs = v.get<long>(); }},
      {"pi", [&](const json& v) { o.pi_list = v.get<std::string>(); }},
      {"r-pi", [&](const json& v) { o.r_pi = v.get<double>(); }},
      {"c-const", [&](const json& v) { o.c_const = v.get<double>(); }},
      {"box-side-scale",
       [&](const json& v) { o.box_side_scale = v.get<double>(); }},
      {"box-budget", [&](const json& v) { o.box_budget = v.get<long>(); }},
  };
  for (const auto& [key, value] : cfg.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw UsageError("config file: unknown key '" + key + "'");
    }
    try {
      it->second(value);
    } catch (const std::exception&) {
      throw UsageError("config file: bad value for '" + key + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Resolution helpers

bool with_replacement_of(const Options& o) {
  if (o.replacement == "with") return true;
  if (o.replacement == "without") return false;
  throw UsageError("--replacement must be 'with' or 'without'");
}

MPolicy m_policy_of(const Options& o) {
  if (o.m_policy == "maximize") return MPolicy{};
  auto colon = o.m_policy.find(':');
  if (colon != std::string::npos) {
    const std::string head = o.m_policy.substr(0, colon);
    const long m = parse_long_token(o.m_policy.substr(colon + 1), "--m-policy");
    if (m < 1) throw UsageError("--m-policy: multiplicity must be >= 1");
    if (head == "fixed") return MPolicy::fixed(m);
    if (head == "below") return MPolicy::largest_at_most(m);
  }
  throw UsageError(
      "--m-policy must be 'maximize', 'fixed:M', or 'below:M' (below is "
      "inclusive: the largest feasible multiplicity that is <= M)");
}

balmatch::DeltaPolicy delta_policy_of(const Options& o, int k) {
  if (!o.delta.empty()) {
    auto values = parse_double_list(o.delta, "--delta");
    if (values.size() == 1 && k > 1) {
      values.assign(static_cast<std::size_t>(k), values[0]);
    }
    return balmatch::DeltaPolicy::fixed(std::move(values));
  }
  return balmatch::DeltaPolicy::schedule(o.delta_schedule);
}

json delta_echo(const balmatch::DeltaPolicy& policy,
                const std::vector<double>& resolved) {
  json out;
  if (policy.kind == balmatch::DeltaPolicy::Kind::fixed) {
    out["mode"] = "fixed";
  } else {
    out["mode"] = "schedule";
    out["scale"] = policy.scale;
  }
  json vals = json::array();
  for (double d : resolved) vals.push_back(finite_or_null(d));
  out["resolved"] = vals;
  return out;
}

Direction direction_of(const std::string& name) {
  if (name == "treated-to-control") return Direction::treated_to_control;
  if (name == "control-to-treated") return Direction::control_to_treated;
  throw UsageError("--direction must be 'both', 'treated-to-control', or "
                   "'control-to-treated'");
}

json report_header(const std::string& subcommand, const Options& o,
                   json config) {
  json out;
  out["version"] = balmatch::kVersion;
  out["subcommand"] = subcommand;
  out["seed"] = o.seed;
  out["config"] = std::move(config);
  return out;
}

json diag_json(const balmatch::DirectionDiagnostics& d,
               const BasisMatrix& bm) {
  json out;
  out["feasible"] = d.feasible;
  out["m"] = d.m_value;
  out["exact"] = d.exact;
  out["certified_absent"] = d.certified_absent;
  out["probes"] = d.probes;
  out["best_excess"] = finite_or_null(d.best_excess);
  if (d.best_excess_column >= 0 &&
      d.best_excess_column < static_cast<int>(bm.column_names.size())) {
    out["worst_column"] = bm.column_names[static_cast<std::size_t>(
        d.best_excess_column)];
    out["worst_column_index"] = d.best_excess_column;
    out["worst_m"] = d.best_excess_m;
  }
  return out;
}

std::string matches_csv(const std::vector<const MatchSolution*>& sols,
                        const Dataset& ds) {
  std::string out = "direction,source_id,target_id\n";
  for (const MatchSolution* sol : sols) {
    const std::string dir = balmatch::direction_name(sol->direction);
    for (const auto& p : sol->pairs) {
      out += dir;
      out += ',';
      out += ds.units[static_cast<std::size_t>(p.source_row)].id;
      out += ',';
      out += ds.units[static_cast<std::size_t>(p.target_row)].id;
      out += '\n';
    }
  }
  return out;
}

std::string weights_csv(const balmatch::ImpliedWeights& w, const Dataset& ds) {
  std::string out = "id,z,weight_raw,weight_estimator_form\n";
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    out += ds.units[i].id;
    out += ',';
    out += std::to_string(ds.units[i].z);
    out += ',';
    out += balmatch::format_double(w.raw[i]);
    out += ',';
    out += balmatch::format_double(w.estimator_form[i]);
    out += '\n';
  }
  return out;
}

// Reconstruct directional solutions from a matches CSV written by `match`.
struct LoadedMatches {
  std::optional<MatchSolution> treated_to_control;
  std::optional<MatchSolution> control_to_treated;
};

LoadedMatches load_matches_csv(const std::string& path, const Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matches file " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("matches file is empty: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "direction,source_id,target_id") {
    throw std::runtime_error(
        "matches file must start with header direction,source_id,target_id");
  }
  std::map<std::string, int> row_of;
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    row_of[ds.units[i].id] = static_cast<int>(i);
  }
  std::vector<std::pair<int, int>> pairs_tc;
  std::vector<std::pair<int, int>> pairs_ct;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_list(line);
    if (fields.size() != 3) {
      throw std::runtime_error("matches file row " + std::to_string(line_no) +
                               ": expected 3 fields");
    }
    auto src = row_of.find(fields[1]);
    auto tgt = row_of.find(fields[2]);
    if (src == row_of.end() || tgt == row_of.end()) {
      throw std::runtime_error("matches file row " + std::to_string(line_no) +
                               ": unknown unit id");
    }
    const int sz = ds.units[static_cast<std::size_t>(src->second)].z;
    const int tz = ds.units[static_cast<std::size_t>(tgt->second)].z;
    if (fields[0] == "treated_to_control") {
      if (sz != 1 || tz != 0) {
        throw std::runtime_error("matches file row " +
                                 std::to_string(line_no) +
                                 ": group mismatch for direction");
      }
      pairs_tc.emplace_back(src->second, tgt->second);
    } else if (fields[0] == "control_to_treated") {
      if (sz != 0 || tz != 1) {
        throw std::runtime_error("matches file row " +
                                 std::to_string(line_no) +
                                 ": group mismatch for direction");
      }
      pairs_ct.emplace_back(src->second, tgt->second);
    } else {
      throw std::runtime_error("matches file row " + std::to_string(line_no) +
                               ": unknown direction '" + fields[0] + "'");
    }
  }

  auto build = [&](Direction dir,
                   const std::vector<std::pair<int, int>>& pairs)
      -> std::optional<MatchSolution> {
    if (pairs.empty()) return std::nullopt;
    const int source_z = dir == Direction::treated_to_control ? 1 : 0;
    MatchSolution sol;
    sol.direction = dir;
    sol.with_replacement = true;
    sol.source_rows = ds.rows_with_z(source_z);
    sol.target_rows = ds.rows_with_z(1 - source_z);
    std::map<int, long> per_source;
    std::set<std::pair<int, int>> seen;
    for (const auto& [s, t] : pairs) {
      if (!seen.insert({s, t}).second) {
        throw std::runtime_error(
            "matches file: duplicate pair for one source unit");
      }
      per_source[s] += 1;
      sol.pairs.push_back(balmatch::MatchPair{s, t});
    }
    if (per_source.size() != sol.source_rows.size()) {
      throw std::runtime_error(
          "matches file: every unit of the source group must be matched");
    }
    const long m = per_source.begin()->second;
    for (const auto& [s, cnt] : per_source) {
      if (cnt != m) {
        throw std::runtime_error(
            "matches file: all source units must have the same number of "
            "matches");
      }
    }
    sol.m_value = m;
    return sol;
  };
  LoadedMatches out;
  out.treated_to_control = build(Direction::treated_to_control, pairs_tc);
  out.control_to_treated = build(Direction::control_to_treated, pairs_ct);
  return out;
}

// ---------------------------------------------------------------------------
// Shared matching pipeline for match/estimate

struct MatchRun {
  Dataset ds;
  BasisMatrix bm;
  balmatch::DeltaPolicy policy;
  BalanceSpec spec;
  bool both = false;
  std::optional<balmatch::SolveReport> tc;
  std::optional<balmatch::SolveReport> ct;

  bool feasible() const {
    bool ok = true;
    if (tc) ok = ok && tc->solution.has_value();
    if (ct) ok = ok && ct->solution.has_value();
    return ok && (tc || ct);
  }
};

MatchRun run_matching(const Options& o) {
  if (o.input.empty()) throw UsageError("--input is required");
  MatchRun run;
  run.ds = balmatch::load_dataset(o.input);
  run.bm = balmatch::expand(run.ds, BasisSpec::parse(o.basis));
  run.policy = delta_policy_of(o, run.bm.k());
  run.spec.delta = balmatch::delta_from_policy(run.policy, run.bm);
  const bool wr = with_replacement_of(o);
  const MPolicy policy = m_policy_of(o);
  SolverOptions sopt;
  sopt.seed = o.seed;
  sopt.exact_limit = o.exact_limit;
  if (o.direction == "both") {
    if (!wr) {
      throw UsageError(
          "--replacement without requires --direction treated-to-control");
    }
    run.both = true;
    auto rep = balmatch::solve_both_directions(run.ds, run.bm, run.spec, wr,
                                               policy, sopt);
    run.tc = std::move(rep.treated_to_control);
    run.ct = std::move(rep.control_to_treated);
  } else {
    const Direction dir = direction_of(o.direction);
    auto rep = balmatch::solve_balance_match(run.ds, run.bm, run.spec, dir,
                                             wr, policy, sopt);
    if (dir == Direction::treated_to_control) {
      run.tc = std::move(rep);
    } else {
      run.ct = std::move(rep);
    }
  }
  return run;
}

json match_config_echo(const Options& o, const MatchRun& run) {
  json cfg;
  cfg["input"] = o.input;
  cfg["basis"] = run.bm.spec.to_string();
  cfg["delta"] = delta_echo(run.policy, run.spec.delta);
  cfg["direction"] = o.direction;
  cfg["replacement"] = o.replacement;
  cfg["m_policy"] = o.m_policy;
  cfg["tie_average"] = !o.no_tie_average;
  cfg["exact_limit"] = o.exact_limit;
  return cfg;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_match(const Options& o) {
  MatchRun run = run_matching(o);
  json out = report_header("match", o, match_config_echo(o, run));
  const auto summary = balmatch::summarize(run.ds);
  out["n"] = summary.n;
  out["n_treated"] = summary.n_treated;
  out["n_control"] = summary.n_control;
  json basis_info;
  basis_info["k"] = run.bm.k();
  basis_info["warnings"] = run.bm.warnings;
  out["basis"] = basis_info;

  json directions;
  if (run.tc) directions["treated_to_control"] = diag_json(run.tc->diag, run.bm);
  if (run.ct) directions["control_to_treated"] = diag_json(run.ct->diag, run.bm);
  out["directions"] = directions;
  out["feasible"] = run.feasible();

  std::vector<const MatchSolution*> sols;
  if (run.tc && run.tc->solution) sols.push_back(&*run.tc->solution);
  if (run.ct && run.ct->solution) sols.push_back(&*run.ct->solution);

  std::optional<balmatch::ImpliedWeights> weights;
  if (run.feasible()) {
    if (run.both) {
      weights = balmatch::implied_weights(run.ds, *run.tc->solution,
                                          *run.ct->solution,
                                          !o.no_tie_average);
    } else if (run.tc) {
      weights = balmatch::implied_weights_att(run.ds, *run.tc->solution,
                                              !o.no_tie_average);
    }
    if (weights) {
      const auto bal = balmatch::check_balance(run.bm, run.ds, *weights,
                                               run.spec);
      json jb;
      json r_tc = json::array();
      for (double r : bal.residual_treated_to_control) r_tc.push_back(r);
      json r_ct = json::array();
      for (double r : bal.residual_control_to_treated) r_ct.push_back(r);
      jb["residual_treated_to_control"] = r_tc;
      jb["residual_control_to_treated"] = r_ct;
      jb["pass"] = bal.pass;
      out["balance"] = jb;
    }
  }

  if (!o.out.empty()) {
    write_text_file(o.out, "matches.csv", matches_csv(sols, run.ds));
    if (weights) {
      write_text_file(o.out, "weights.csv", weights_csv(*weights, run.ds));
    }
    write_text_file(o.out, "report.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return run.feasible() ? kExitOk : kExitInfeasible;
}

json estimate_json(const balmatch::EstimateResult& est) {
  json je;
  je["estimand"] = est.estimand;
  je["point"] = est.point;
  if (est.variance) je["variance"] = *est.variance;
  if (est.variance_per_obs) {
    je["variance_per_obs"] = *est.variance_per_obs;
    je["se"] = std::sqrt(*est.variance_per_obs);
  }
  if (est.ci_lo) je["ci_lo"] = *est.ci_lo;
  if (est.ci_hi) je["ci_hi"] = *est.ci_hi;
  je["ci_level"] = est.ci_level;
  je["n"] = est.n;
  je["ridge_fallback"] = est.ridge_fallback;
  if (!est.caveat.empty()) je["caveat"] = est.caveat;
  return je;
}

int cmd_estimate(const Options& o) {
  if (o.estimand != "ate" && o.estimand != "att") {
    throw UsageError("--estimand must be 'ate' or 'att'");
  }
  const bool want_both = o.estimand == "ate";

  std::optional<MatchSolution> sol_tc;
  std::optional<MatchSolution> sol_ct;
  json cfg;
  Dataset ds;
  BasisMatrix bm;
  json directions;

  if (!o.matches.empty()) {
    if (o.input.empty()) throw UsageError("--input is required");
    ds = balmatch::load_dataset(o.input);
    bm = balmatch::expand(ds, BasisSpec::parse(o.basis));
    auto loaded = load_matches_csv(o.matches, ds);
    sol_tc = std::move(loaded.treated_to_control);
    sol_ct = std::move(loaded.control_to_treated);
    cfg["input"] = o.input;
    cfg["basis"] = bm.spec.to_string();
    cfg["matches"] = o.matches;
    cfg["estimand"] = o.estimand;
    cfg["level"] = o.level;
  } else {
    Options adjusted = o;
    if (!want_both) adjusted.direction = "treated-to-control";
    MatchRun run = run_matching(adjusted);
    cfg = match_config_echo(adjusted, run);
    cfg["estimand"] = o.estimand;
    cfg["level"] = o.level;
    if (run.tc) {
      directions["treated_to_control"] = diag_json(run.tc->diag, run.bm);
      if (run.tc->solution) sol_tc = std::move(run.tc->solution);
    }
    if (run.ct) {
      directions["control_to_treated"] = diag_json(run.ct->diag, run.bm);
      if (run.ct->solution) sol_ct = std::move(run.ct->solution);
    }
    ds = std::move(run.ds);
    bm = std::move(run.bm);
  }

  json out = report_header("estimate", o, std::move(cfg));
  if (!directions.is_null()) out["directions"] = directions;

  const bool feasible =
      want_both ? (sol_tc.has_value() && sol_ct.has_value())
                : sol_tc.has_value();
  out["feasible"] = feasible;
  if (!feasible) {
    if (!o.out.empty()) {
      write_text_file(o.out, "estimate.json", out.dump(2) + "\n");
    }
    std::cout << out.dump(2) << "\n";
    return kExitInfeasible;
  }

  balmatch::EstimateResult est;
  if (want_both) {
    est = balmatch::estimate_ate(ds, bm, *sol_tc, *sol_ct, o.level);
  } else {
    est = balmatch::estimate_att(ds, *sol_tc);
  }
  out["estimate"] = estimate_json(est);
  if (!o.out.empty()) {
    write_text_file(o.out, "estimate.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_simulate(const Options& o) {
  balmatch::ExperimentSpec ex;
  ex.dgp = o.dgp;
  ex.estimators.clear();
  if (!o.estimators.empty()) {
    for (const auto& name : split_list(o.estimators)) {
      ex.estimators.push_back(balmatch::estimator_kind_from_name(name));
    }
  }
  if (o.sample_sizes.empty()) throw UsageError("--n is required");
  ex.sample_sizes = parse_long_list(o.sample_sizes, "--n");
  ex.replications = o.replications;
  ex.basis = BasisSpec::parse(o.basis);
  // Fixed tolerances cannot be resolved without a basis matrix width; the
  // per-replication policy handles both modes.
  if (!o.delta.empty()) {
    ex.delta = balmatch::DeltaPolicy::fixed(
        parse_double_list(o.delta, "--delta"));
  } else {
    ex.delta = balmatch::DeltaPolicy::schedule(o.delta_schedule);
  }
  ex.ci_level = o.level;
  ex.solver.exact_limit = o.exact_limit;
  ex.seed = o.seed;
  ex.threads = o.threads;

  balmatch::MCReport report;
  if (ex.estimators.empty()) {
    report.dgp = ex.dgp;  // empty experiment: header-only CSV
    report.true_value = balmatch::dgp_by_name(ex.dgp).true_ate;
  } else {
    report = balmatch::run_monte_carlo(ex);
  }
  const std::string csv = balmatch::mc_report_csv(report);

  json cfg;
  cfg["dgp"] = ex.dgp;
  cfg["estimators"] = o.estimators;
  cfg["n"] = o.sample_sizes;
  cfg["replications"] = ex.replications;
  cfg["basis"] = ex.basis.to_string();
  if (ex.delta.kind == balmatch::DeltaPolicy::Kind::fixed) {
    cfg["delta"] = delta_echo(ex.delta, ex.delta.fixed_values);
  } else {
    json d;
    d["mode"] = "schedule";
    d["scale"] = ex.delta.scale;
    cfg["delta"] = d;
  }
  cfg["level"] = ex.ci_level;
  cfg["threads"] = ex.threads;
  cfg["exact_limit"] = o.exact_limit;
  json out = report_header("simulate", o, std::move(cfg));
  out["dgp_true_value"] = report.true_value;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json jc;
    jc["estimator"] = c.estimator;
    jc["n"] = c.n;
    jc["replications"] = c.replications;
    jc["infeasible"] = c.infeasible;
    jc["bias"] = finite_or_null(c.bias);
    jc["rmse"] = finite_or_null(c.rmse);
    jc["sd"] = finite_or_null(c.sd);
    jc["mean_se"] = finite_or_null(c.mean_se);
    jc["coverage"] = finite_or_null(c.coverage);
    cells.push_back(jc);
  }
  out["cells"] = cells;

  json rates;
  for (const auto& kind : ex.estimators) {
    const std::string name = balmatch::estimator_kind_name(kind);
    if (rates.contains(name)) continue;
    std::vector<double> ns;
    std::vector<double> rmses;
    bool usable = true;
    for (const auto& c : report.cells) {
      if (c.estimator != name) continue;
      if (!(std::isfinite(c.rmse) && c.rmse > 0.0)) usable = false;
      ns.push_back(static_cast<double>(c.n));
      rmses.push_back(c.rmse);
    }
    if (usable && ns.size() >= 3) {
      rates[name] = balmatch::rate_fit(ns, rmses);
    }
  }
  if (!rates.is_null()) out["rate_fit"] = rates;

  if (!o.out.empty()) {
    write_text_file(o.out, "simulation.csv", csv);
    write_text_file(o.out, "simulation.json", out.dump(2) + "\n");
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << csv;
  }
  return kExitOk;
}

int cmd_diagnose(const Options& o) {
  json out;
  if (!o.input.empty()) {
    // Data mode: box construction on the balance columns.
    Dataset ds = balmatch::load_dataset(o.input);
    BasisMatrix bm = balmatch::expand(ds, BasisSpec::parse(o.basis));
    auto policy = delta_policy_of(o, bm.k());
    BalanceSpec spec;
    spec.delta = balmatch::delta_from_policy(policy, bm);

    json cfg;
    cfg["input"] = o.input;
    cfg["basis"] = bm.spec.to_string();
    cfg["delta"] = delta_echo(policy, spec.delta);
    cfg["delta0"] = o.delta0;
    cfg["box_side_scale"] = o.box_side_scale;
    cfg["box_budget"] = o.box_budget;
    out = report_header("diagnose", o, std::move(cfg));

    std::vector<int> z;
    z.reserve(ds.units.size());
    for (const auto& u : ds.units) z.push_back(u.z);
    balmatch::RhoOptions ropt;
    ropt.box_budget = o.box_budget;
    ropt.seed = o.seed;
    if (o.box_side_scale != 1.0) {
      for (double d : spec.delta) ropt.box_side.push_back(o.box_side_scale * d);
    }
    const auto rho = balmatch::rho_boxes(bm, z, spec, ropt);
    json jr;
    jr["rho"] = rho.rho;
    jr["se"] = rho.se;
    jr["vacuous"] = rho.vacuous;
    jr["boxes_total"] = rho.boxes_total;
    jr["boxes_evaluated"] = rho.boxes_evaluated;
    jr["sampled"] = rho.sampled;
    jr["n_controls"] = rho.n_controls;
    json tm = json::array();
    for (double v : rho.treated_mean) tm.push_back(v);
    jr["treated_mean"] = tm;
    json am = json::array();
    for (double v : rho.argmin_center) am.push_back(v);
    jr["argmin_center"] = am;
    out["rho"] = jr;

    const auto bound = balmatch::sample_size_bound(rho.rho, o.delta0, bm.k());
    out["n_min"] = bound ? json(*bound) : json();

    const auto reg = balmatch::check_regularity(bm);
    json jg;
    jg["sup_row_norm"] = reg.sup_row_norm;
    jg["operator_norm"] = reg.operator_norm;
    jg["min_eigenvalue"] = reg.min_eigenvalue;
    jg["degenerate"] = reg.degenerate;
    jg["k_exceeds_root_n"] = reg.k_exceeds_root_n;
    jg["k_exceeds_n"] = reg.k_exceeds_n;
    out["regularity"] = jg;
  } else if (o.rho >= 0.0) {
    // Formula mode.
    if (o.k_columns < 1) throw UsageError("--k is required with --rho");
    json cfg;
    cfg["rho"] = o.rho;
    cfg["delta0"] = o.delta0;
    cfg["k"] = o.k_columns;
    out = report_header("diagnose", o, std::move(cfg));
    const auto bound =
        balmatch::sample_size_bound(o.rho, o.delta0, o.k_columns);
    out["n_min"] = bound ? json(*bound) : json();
  } else {
    throw UsageError("diagnose needs --input (data mode) or --rho (formula "
                     "mode)");
  }

  if (!o.pi_list.empty()) {
    if (o.k_columns < 1 || o.n_obs < 1) {
      throw UsageError("--pi requires --k and --n-obs");
    }
    const auto pi = parse_double_list(o.pi_list, "--pi");
    const auto ov = balmatch::overlap_report(pi, o.k_columns, o.n_obs,
                                             o.r_pi, o.c_const);
    json jo;
    jo["c3"] = ov.c3;
    jo["threshold"] = ov.threshold;
    jo["pass"] = ov.pass;
    jo["c_const"] = ov.c_const;
    jo["r_pi"] = ov.r_pi;
    out["overlap"] = jo;
  }

  if (!o.out.empty()) {
    write_text_file(o.out, "feasibility.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_oracle(const Options& o) {
  if (o.input.empty()) throw UsageError("--input is required");
  if (o.direction == "both") {
    throw UsageError("oracle needs a single --direction");
  }
  Dataset ds = balmatch::load_dataset(o.input);
  BasisMatrix bm = balmatch::expand(ds, BasisSpec::parse(o.basis));
  auto policy = delta_policy_of(o, bm.k());
  BalanceSpec spec;
  spec.delta = balmatch::delta_from_policy(policy, bm);
  const bool wr = with_replacement_of(o);
  const Direction dir = direction_of(o.direction);

  json cfg;
  cfg["input"] = o.input;
  cfg["basis"] = bm.spec.to_string();
  cfg["delta"] = delta_echo(policy, spec.delta);
  cfg["direction"] = o.direction;
  cfg["replacement"] = o.replacement;
  json out = report_header("oracle", o, std::move(cfg));

  std::vector<int> z;
  z.reserve(ds.units.size());
  for (const auto& u : ds.units) z.push_back(u.z);
  const auto m = balmatch::oracle_max_m(bm, z, spec, dir, wr);
  out["m_max"] = m ? json(*m) : json();
  if (!o.out.empty()) {
    write_text_file(o.out, "oracle.json", out.dump(2) + "\n");
  }
  std::cout << out.dump(2) << "\n";
  return m ? kExitOk : kExitInfeasible;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariate-balance matching and estimation"};
  app.set_version_flag("--version", balmatch::kVersion);
  app.require_subcommand(1);

  Options o;
  std::string config_path;

  // The config file provides defaults; explicit flags override it. The file
  // must be applied before parsing, so scan argv for it directly.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      config_path = argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      config_path = arg.substr(9);
    }
  }
  try {
    if (!config_path.empty()) apply_config_file(config_path, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path,
                    "JSON config file with option defaults");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--out", o.out, "output directory for report files");
  };
  auto add_data = [&](CLI::App* cmd) {
    cmd->add_option("--input", o.input, "input dataset CSV (id,z,y,x1..xd)");
    cmd->add_option("--basis", o.basis,
                    "balance columns: raw | poly:D | spline:k1,.. | inter:R "
                    "(append +int for an intercept)");
    cmd->add_option("--delta", o.delta,
                    "fixed balance tolerances, comma separated (a single "
                    "value broadcasts)");
    cmd->add_option("--delta-schedule", o.delta_schedule,
                    "tolerance schedule scale c in c * sd / sqrt(n)");
  };
  auto add_solver = [&](CLI::App* cmd) {
    cmd->add_option("--direction", o.direction,
                    "both | treated-to-control | control-to-treated");
    cmd->add_option("--replacement", o.replacement,
                    "'with' or 'without' (without: treated-to-control only)");
    cmd->add_option("--m-policy", o.m_policy,
                    "maximize | fixed:M | below:M (inclusive cap)");
    cmd->add_option("--exact-limit", o.exact_limit,
                    "largest target-group size solved exactly");
  };

  CLI::App* c_match = app.add_subcommand("match", "solve the balance match");
  add_common(c_match);
  add_data(c_match);
  add_solver(c_match);
  c_match->add_flag("--no-tie-average", o.no_tie_average,
                    "keep per-unit weights of duplicated units distinct");

  CLI::App* c_est = app.add_subcommand("estimate", "match and estimate");
  add_common(c_est);
  add_data(c_est);
  add_solver(c_est);
  c_est->add_option("--estimand", o.estimand, "ate | att");
  c_est->add_option("--level", o.level, "confidence level");
  c_est->add_option("--matches", o.matches,
                    "reuse a matches.csv instead of solving");

  CLI::App* c_sim = app.add_subcommand("simulate", "monte carlo study");
  add_common(c_sim);
  c_sim->add_option("--dgp", o.dgp, "dgp-a | dgp-b | dgp-c");
  c_sim->add_option("--estimators", o.estimators,
                    "comma list of balance,nn (empty for none)");
  c_sim->add_option("--n", o.sample_sizes, "comma list of sample sizes");
  c_sim->add_option("--replications", o.replications, "replications per n");
  c_sim->add_option("--basis", o.basis, "balance columns");
  c_sim->add_option("--delta", o.delta, "fixed tolerances");
  c_sim->add_option("--delta-schedule", o.delta_schedule, "schedule scale");
  c_sim->add_option("--level", o.level, "confidence level");
  c_sim->add_option("--threads", o.threads, "worker thread cap");
  c_sim->add_option("--exact-limit", o.exact_limit,
                    "largest target-group size solved exactly");

  CLI::App* c_diag = app.add_subcommand("diagnose", "feasibility diagnostics");
  add_common(c_diag);
  add_data(c_diag);
  c_diag->add_option("--rho", o.rho, "box probability (formula mode)");
  c_diag->add_option("--delta0", o.delta0, "failure probability budget");
  c_diag->add_option("--k", o.k_columns, "number of balance columns");
  c_diag->add_option("--n-obs", o.n_obs, "sample size for the overlap check");
  c_diag->add_option("--pi", o.pi_list, "propensities for the overlap check");
  c_diag->add_option("--r-pi", o.r_pi, "overlap decay exponent");
  c_diag->add_option("--c-const", o.c_const, "overlap threshold constant");
  c_diag->add_option("--box-side-scale", o.box_side_scale,
                     "box side length as a multiple of delta");
  c_diag->add_option("--box-budget", o.box_budget,
                     "maximum boxes evaluated exactly");

  CLI::App* c_oracle = app.add_subcommand(
      "oracle", "exhaustive reference solver (small instances)");
  add_common(c_oracle);
  add_data(c_oracle);
  c_oracle->add_option("--direction", o.direction,
                       "treated-to-control | control-to-treated");
  c_oracle->add_option("--replacement", o.replacement, "'with' or 'without'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (c_match->parsed()) return cmd_match(o);
    if (c_est->parsed()) return cmd_estimate(o);
    if (c_sim->parsed()) return cmd_simulate(o);
    if (c_diag->parsed()) return cmd_diagnose(o);
    if (c_oracle->parsed()) return cmd_oracle(o);
    std::cerr << "error: no subcommand\n";
    return kExitError;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
