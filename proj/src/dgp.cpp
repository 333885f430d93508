#include "balmatch/dgp.hpp"

#include <cmath>
#include <stdexcept>

namespace balmatch {

namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void sample_uniform_cube(Rng& rng, std::vector<double>& x) {
  for (double& v : x) v = rng.uniform();
}

}  // namespace

DGPSpec make_dgp_a() {
  DGPSpec s;
  s.name = "dgp-a";
  s.dim = 2;
  s.sample_x = sample_uniform_cube;
  s.propensity = [](const std::vector<double>& x) {
    return logistic(x[0] + x[1] - 1.0);
  };
  s.mean0 = [](const std::vector<double>& x) {
    return x[0] + x[1] + x[0] * x[0] + x[1] * x[1];
  };
  s.mean1 = [](const std::vector<double>& x) {
    return x[0] + x[1] + x[0] * x[0] + x[1] * x[1] + 1.0 +
           0.5 * (x[0] - x[1]);
  };
  s.noise0 = 0.5;
  s.noise1 = 0.5;
  s.true_ate = 1.0;
  return s;
}

DGPSpec make_dgp_b() {
  DGPSpec s;
  s.name = "dgp-b";
  s.dim = 2;
  s.sample_x = sample_uniform_cube;
  s.propensity = [](const std::vector<double>&) { return 0.5; };
  s.mean0 = [](const std::vector<double>& x) { return 1.0 + x[0] + x[1]; };
  s.mean1 = [](const std::vector<double>& x) { return 3.0 + x[0] + x[1]; };
  s.noise0 = 1.0;
  s.noise1 = 1.0;
  s.true_ate = 2.0;
  return s;
}

DGPSpec make_dgp_c() {
  DGPSpec s;
  s.name = "dgp-c";
  s.dim = 8;
  s.sample_x = sample_uniform_cube;
  s.propensity = [](const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v - 0.5;
    return logistic(0.6 * acc);
  };
  s.mean0 = [](const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v + 1.5 * (v - 0.5) * (v - 0.5);
    return acc;
  };
  s.mean1 = [](const std::vector<double>& x) {
    double acc = 1.0;
    for (double v : x) acc += v + 1.5 * (v - 0.5) * (v - 0.5);
    return acc;
  };
  s.noise0 = 0.25;
  s.noise1 = 0.25;
  s.true_ate = 1.0;
  return s;
}

DGPSpec dgp_by_name(const std::string& name) {
  if (name == "dgp-a") return make_dgp_a();
  if (name == "dgp-b") return make_dgp_b();
  if (name == "dgp-c") return make_dgp_c();
  throw std::invalid_argument("unknown generator '" + name +
                              "' (expected dgp-a, dgp-b, or dgp-c)");
}

Dataset dgp_sample(const DGPSpec& spec, long n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("dgp_sample: n must be >= 1");
  if (spec.dim < 1 || !spec.sample_x || !spec.propensity || !spec.mean0 ||
      !spec.mean1) {
    throw std::invalid_argument("dgp_sample: incomplete generator spec");
  }
  Rng rng(mix_seed({seed, 0x6467702dULL}));
  Dataset ds;
  ds.dim = spec.dim;
  ds.units.resize(n);
  int width = 1;
  for (long v = n; v >= 10; v /= 10) ++width;
  for (long i = 0; i < n; ++i) {
    Unit& u = ds.units[i];
    std::string idx = std::to_string(i + 1);
    u.id = "u" + std::string(width - idx.size(), '0') + idx;
    u.x.resize(spec.dim);
    spec.sample_x(rng, u.x);
    const double pi = spec.propensity(u.x);
    if (!(pi >= 0.0 && pi <= 1.0)) {
      throw std::runtime_error("dgp_sample: assignment probability outside [0,1]");
    }
    u.z = rng.uniform() < pi ? 1 : 0;
    const double mean = (u.z == 1) ? spec.mean1(u.x) : spec.mean0(u.x);
    const double scale = (u.z == 1) ? spec.noise1 : spec.noise0;
    u.y = (scale > 0.0) ? mean + scale * rng.normal() : mean;
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace balmatch
