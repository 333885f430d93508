#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

// End-to-end checks of the command line binary. BALMATCH_CLI_PATH is
// injected by the build so the tests run the freshly built executable.

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct RunResult {
  int code = -1;
  std::string out;
};

fs::path scratch_dir() {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() /
                       ("balmatch_cli_" + std::to_string(++counter));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path capture = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + BALMATCH_CLI_PATH + "\" " +
                          args + " > \"" + capture.string() + "\" 2>&1";
  RunResult r;
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(capture);
  return r;
}

fs::path identical_arms_fixture(const fs::path& dir) {
  const fs::path p = dir / "identical.csv";
  write_file(p,
             "id,z,y,x1\n"
             "t1,1,1.0,0.25\n"
             "t2,1,2.0,0.75\n"
             "c1,0,0.5,0.25\n"
             "c2,0,1.5,0.75\n");
  return p;
}

fs::path disjoint_fixture(const fs::path& dir) {
  const fs::path p = dir / "disjoint.csv";
  write_file(p,
             "id,z,y,x1\n"
             "t1,1,1.0,0.0\n"
             "t2,1,2.0,0.1\n"
             "c1,0,0.5,5.0\n"
             "c2,0,1.5,5.2\n"
             "c3,0,2.5,6.0\n");
  return p;
}

fs::path twin_fixture(const fs::path& dir) {
  // Same covariates in both arms and a constant outcome: any balanced
  // matching yields a contrast of exactly zero.
  const fs::path p = dir / "twin.csv";
  std::string text = "id,z,y,x1,x2\n";
  const double xs[][2] = {{0.1, 0.9}, {0.4, 0.3}, {0.6, 0.7}, {0.8, 0.2}};
  for (int i = 0; i < 4; ++i) {
    text += "t" + std::to_string(i) + ",1,2.5," + std::to_string(xs[i][0]) +
            "," + std::to_string(xs[i][1]) + "\n";
  }
  for (int i = 0; i < 4; ++i) {
    text += "c" + std::to_string(i) + ",0,2.5," + std::to_string(xs[i][0]) +
            "," + std::to_string(xs[i][1]) + "\n";
  }
  write_file(p, text);
  return p;
}

}  // namespace

TEST_CASE("cli match solves the identical-arms fixture") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  const auto out = dir / "out";
  const auto r = run_cli("match --input \"" + fixture.string() +
                             "\" --delta 0.4 --out \"" + out.string() + "\"",
                         dir);
  CHECK(r.code == 0);
  const json rep = json::parse(r.out);
  CHECK(rep["feasible"] == true);
  CHECK(rep["version"].is_string());
  CHECK(rep["directions"]["treated_to_control"]["m"] == 2);
  CHECK(rep["directions"]["control_to_treated"]["m"] == 2);
  CHECK(rep["balance"]["pass"] == true);
  CHECK(fs::exists(out / "matches.csv"));
  CHECK(fs::exists(out / "weights.csv"));
  CHECK(fs::exists(out / "report.json"));
  // The stdout report and the file are the same document.
  CHECK(json::parse(read_file(out / "report.json")) == rep);
  // The weights file covers every unit.
  const std::string weights = read_file(out / "weights.csv");
  CHECK(weights.rfind("id,z,weight_raw,weight_estimator_form\n", 0) == 0);
  CHECK(weights.find("t1,1,") != std::string::npos);
  CHECK(weights.find("c2,0,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli match reports infeasibility with the worst violations") {
  const auto dir = scratch_dir();
  const auto fixture = disjoint_fixture(dir);
  const auto r = run_cli("match --input \"" + fixture.string() +
                             "\" --delta 0.3",
                         dir);
  CHECK(r.code == 2);
  const json rep = json::parse(r.out);
  CHECK(rep["feasible"] == false);
  for (const char* d : {"treated_to_control", "control_to_treated"}) {
    const auto& diag = rep["directions"][d];
    CHECK(diag["feasible"] == false);
    CHECK(diag["worst_column"] == "x1");
    CHECK(diag["best_excess"].get<double>() > 0.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli rejects malformed input with exit code 1") {
  const auto dir = scratch_dir();
  const fs::path bad = dir / "bad.csv";
  write_file(bad, "id,z\nt1,1\n");
  const auto r = run_cli("match --input \"" + bad.string() + "\"", dir);
  CHECK(r.code == 1);
  CHECK(r.out.find("error") != std::string::npos);

  // Unknown flags are also usage errors.
  const auto r2 = run_cli("match --frobnicate", dir);
  CHECK(r2.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli estimate returns a zero effect on the twin fixture") {
  const auto dir = scratch_dir();
  const auto fixture = twin_fixture(dir);
  const auto r = run_cli("estimate --input \"" + fixture.string() +
                             "\" --delta 0.2 --estimand ate",
                         dir);
  CHECK(r.code == 0);
  const json rep = json::parse(r.out);
  CHECK(rep["feasible"] == true);
  CHECK(std::abs(rep["estimate"]["point"].get<double>()) <= 1e-10);
  CHECK(rep["estimate"].contains("variance"));
  CHECK(rep["estimate"].contains("ci_lo"));
  fs::remove_all(dir);
}

TEST_CASE("cli att estimate omits the variance and explains itself") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  const auto r = run_cli("estimate --input \"" + fixture.string() +
                             "\" --delta 0.4 --estimand att",
                         dir);
  CHECK(r.code == 0);
  const json rep = json::parse(r.out);
  CHECK(rep["estimate"]["estimand"] == "att");
  CHECK_FALSE(rep["estimate"].contains("variance"));
  CHECK_FALSE(rep["estimate"].contains("ci_lo"));
  CHECK(rep["estimate"]["caveat"].is_string());
  fs::remove_all(dir);
}

TEST_CASE("cli estimate can reuse a matches file") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  const auto out = dir / "m";
  const auto direct = run_cli("estimate --input \"" + fixture.string() +
                                  "\" --delta 0.4",
                              dir);
  REQUIRE(direct.code == 0);
  const auto matched = run_cli("match --input \"" + fixture.string() +
                                   "\" --delta 0.4 --out \"" + out.string() +
                                   "\"",
                               dir);
  REQUIRE(matched.code == 0);
  const auto reused = run_cli("estimate --input \"" + fixture.string() +
                                  "\" --matches \"" +
                                  (out / "matches.csv").string() + "\"",
                              dir);
  CHECK(reused.code == 0);
  const double a = json::parse(direct.out)["estimate"]["point"].get<double>();
  const double b = json::parse(reused.out)["estimate"]["point"].get<double>();
  CHECK(a == b);  // same pairs, bit-identical arithmetic

  // A corrupted matches file is rejected.
  write_file(dir / "broken.csv", "direction,source_id,target_id\nbogus,t1,c1\n");
  const auto broken = run_cli("estimate --input \"" + fixture.string() +
                                  "\" --matches \"" +
                                  (dir / "broken.csv").string() + "\"",
                              dir);
  CHECK(broken.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli simulate supports an empty estimator list") {
  const auto dir = scratch_dir();
  const auto r = run_cli(
      "simulate --dgp dgp-b --estimators \"\" --n 60 --replications 2", dir);
  CHECK(r.code == 0);
  CHECK(r.out ==
        "estimator,n,replications,infeasible,bias,rmse,sd,mean_se,coverage\n");
  fs::remove_all(dir);
}

TEST_CASE("cli simulate reruns are byte identical") {
  const auto dir = scratch_dir();
  const std::string base = "simulate --dgp dgp-b --estimators balance --n "
                           "60,90 --replications 3 --seed 7";
  const auto d1 = dir / "a";
  const auto d2 = dir / "b";
  const auto d3 = dir / "c";
  REQUIRE(run_cli(base + " --out \"" + d1.string() + "\"", dir).code == 0);
  REQUIRE(run_cli(base + " --out \"" + d2.string() + "\"", dir).code == 0);
  REQUIRE(run_cli(base + " --threads 2 --out \"" + d3.string() + "\"",
                  dir).code == 0);
  const std::string csv1 = read_file(d1 / "simulation.csv");
  CHECK(csv1 == read_file(d2 / "simulation.csv"));
  CHECK(csv1 == read_file(d3 / "simulation.csv"));
  CHECK(csv1.find("balance,60,3,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli diagnose computes the pinned formula values") {
  const auto dir = scratch_dir();
  const auto r = run_cli("diagnose --rho 0.5 --delta0 0.05 --k 2", dir);
  CHECK(r.code == 0);
  const json rep = json::parse(r.out);
  CHECK(rep["n_min"] == 7);

  // Data mode reports the box construction plus regularity. Side 3*delta
  // makes all three windows overlap the control support.
  const auto fixture = identical_arms_fixture(dir);
  const auto r2 = run_cli("diagnose --input \"" + fixture.string() +
                              "\" --delta 0.4 --box-side-scale 3 "
                              "--pi 0.4,0.5 --k 1 --n-obs 50",
                          dir);
  CHECK(r2.code == 0);
  const json rep2 = json::parse(r2.out);
  // Treated mean 0.5, delta 0.4, side 1.2: windows centered at -0.1, 0.5,
  // and 1.1 hold 1, 2, and 1 of the 2 controls, so the minimum share is 1/2.
  CHECK(rep2["rho"]["rho"].get<double>() ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep2["rho"]["vacuous"] == false);
  CHECK(rep2["regularity"].contains("min_eigenvalue"));
  CHECK(rep2["overlap"]["pass"] == true);
  CHECK(rep2["overlap"]["threshold"].get<double>() ==
        doctest::Approx(0.02).epsilon(1e-9));

  // Neither data nor formula inputs: usage error.
  const auto r3 = run_cli("diagnose", dir);
  CHECK(r3.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli oracle reports the exhaustive maximum") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  const auto r = run_cli("oracle --input \"" + fixture.string() +
                             "\" --delta 0.4 --direction treated-to-control",
                         dir);
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["m_max"] == 2);

  const auto disjoint = disjoint_fixture(dir);
  const auto r2 = run_cli("oracle --input \"" + disjoint.string() +
                              "\" --delta 0.3 --direction treated-to-control",
                          dir);
  CHECK(r2.code == 2);
  CHECK(json::parse(r2.out)["m_max"].is_null());
  fs::remove_all(dir);
}

TEST_CASE("cli flags override the config file") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  const fs::path cfg = dir / "cfg.json";
  write_file(cfg, "{\"input\": \"" + fixture.string() +
                      "\", \"delta\": \"0.5\", \"seed\": 9}\n");
  // Config alone supplies the input and tolerance.
  const auto r = run_cli("match --config \"" + cfg.string() + "\"", dir);
  CHECK(r.code == 0);
  const json rep = json::parse(r.out);
  CHECK(rep["seed"] == 9);
  CHECK(rep["config"]["delta"]["resolved"][0].get<double>() == 0.5);
  // An explicit flag wins over the file.
  const auto r2 = run_cli("match --config \"" + cfg.string() +
                              "\" --delta 0.45",
                          dir);
  CHECK(r2.code == 0);
  const json rep2 = json::parse(r2.out);
  CHECK(rep2["config"]["delta"]["resolved"][0].get<double>() == 0.45);

  write_file(cfg, "{\"no_such_key\": 1}\n");
  const auto r3 = run_cli("match --config \"" + cfg.string() + "\"", dir);
  CHECK(r3.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli match honors direction and replacement restrictions") {
  const auto dir = scratch_dir();
  const auto fixture = identical_arms_fixture(dir);
  // Without replacement in the both-directions default is a usage error.
  const auto r = run_cli("match --input \"" + fixture.string() +
                             "\" --replacement without",
                         dir);
  CHECK(r.code == 1);
  const auto r2 = run_cli("match --input \"" + fixture.string() +
                              "\" --replacement without --direction "
                              "treated-to-control --delta 0.4",
                          dir);
  CHECK(r2.code == 0);
  const json rep = json::parse(r2.out);
  CHECK(rep["directions"]["treated_to_control"]["m"] == 1);
  CHECK_FALSE(rep["directions"].contains("control_to_treated"));
  fs::remove_all(dir);
}
