#include "balmatch/feasibility.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "balmatch/rng.hpp"

namespace balmatch {

namespace {

constexpr double kOffsetScale = 1.5;  // box centers sit at mean + 1.5*delta*b

std::vector<double> column_means(const BasisMatrix& bm,
                                 const std::vector<std::size_t>& rows) {
  std::vector<double> out(static_cast<std::size_t>(bm.k()), 0.0);
  for (std::size_t r : rows) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] += bm.values(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(k));
    }
  }
  for (double& v : out) v /= static_cast<double>(rows.size());
  return out;
}

class BitBlocks {
 public:
  explicit BitBlocks(std::size_t bits)
      : bits_(bits), blocks_((bits + 63) / 64, 0ULL) {}

  void set(std::size_t i) { blocks_[i >> 6] |= (1ULL << (i & 63)); }

  static long and_count(const std::vector<const BitBlocks*>& masks,
                        std::size_t bits) {
    if (masks.empty()) return static_cast<long>(bits);
    std::size_t nb = masks.front()->blocks_.size();
    long total = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      std::uint64_t word = ~0ULL;
      for (const BitBlocks* m : masks) word &= m->blocks_[b];
      if (b + 1 == nb && (bits & 63) != 0) {
        word &= (1ULL << (bits & 63)) - 1;
      }
      total += std::popcount(word);
    }
    return total;
  }

 private:
  std::size_t bits_;
  std::vector<std::uint64_t> blocks_;
};

long pow3_capped(int k, long cap) {
  long v = 1;
  for (int i = 0; i < k; ++i) {
    if (v > cap / 3) return cap + 1;  // saturate without overflow
    v *= 3;
  }
  return v;
}

}  // namespace

RhoReport rho_boxes(const BasisMatrix& bm, const std::vector<int>& z,
                    const BalanceSpec& spec, const RhoOptions& opt) {
  const std::size_t n = bm.n();
  const std::size_t kk = bm.k();
  if (z.size() != n) {
    throw std::invalid_argument("rho_boxes: z length mismatch");
  }
  if (spec.delta.size() != kk) {
    throw std::invalid_argument("rho_boxes: delta length mismatch");
  }
  if (!opt.box_side.empty() && opt.box_side.size() != kk) {
    throw std::invalid_argument("rho_boxes: box_side length mismatch");
  }
  if (opt.box_budget < 1) {
    throw std::invalid_argument("rho_boxes: box_budget must be positive");
  }

  std::vector<std::size_t> treated_rows;
  std::vector<std::size_t> control_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i] == 1) {
      treated_rows.push_back(i);
    } else if (z[i] == 0) {
      control_rows.push_back(i);
    } else {
      throw std::invalid_argument("rho_boxes: z entries must be 0 or 1");
    }
  }
  if (treated_rows.empty() || control_rows.empty()) {
    throw std::invalid_argument("rho_boxes: both groups must be nonempty");
  }

  RhoReport rep;
  rep.n_controls = static_cast<long>(control_rows.size());
  rep.treated_mean = column_means(bm, treated_rows);

  // Only columns with a finite tolerance constrain the match, so only they
  // contribute a box dimension.
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < kk; ++k) {
    double d = spec.delta[k];
    if (!std::isfinite(d)) continue;
    if (d <= 0.0) throw std::invalid_argument("rho_boxes: delta must be > 0");
    active.push_back(k);
    if (!opt.box_side.empty() && !(opt.box_side[k] > 0.0)) {
      throw std::invalid_argument("rho_boxes: box_side must be > 0");
    }
  }

  rep.argmin_center = rep.treated_mean;
  const int ka = static_cast<int>(active.size());
  if (ka == 0) {
    // No constrained column: the single (unbounded) box holds every control.
    rep.rho = 1.0;
    rep.se = 0.0;
    rep.boxes_total = 1;
    rep.boxes_evaluated = 1;
    return rep;
  }

  // Membership slabs per active column and offset in {-1, 0, +1}.
  const std::size_t nc = control_rows.size();
  std::vector<std::array<BitBlocks, 3>> slabs;
  slabs.reserve(active.size());
  for (std::size_t a = 0; a < active.size(); ++a) {
    std::size_t k = active[a];
    double side = opt.box_side.empty() ? spec.delta[k] : opt.box_side[k];
    double half = 0.5 * side;
    slabs.push_back({BitBlocks(nc), BitBlocks(nc), BitBlocks(nc)});
    for (int o = 0; o < 3; ++o) {
      double center =
          rep.treated_mean[k] + kOffsetScale * spec.delta[k] * (o - 1);
      BitBlocks& mask = slabs.back()[static_cast<std::size_t>(o)];
      for (std::size_t i = 0; i < nc; ++i) {
        double x = bm.values(static_cast<Eigen::Index>(control_rows[i]),
                             static_cast<Eigen::Index>(k));
        if (std::abs(x - center) <= half) mask.set(i);
      }
    }
  }

  rep.boxes_total = pow3_capped(ka, std::numeric_limits<long>::max() / 4);
  const bool exhaustive = rep.boxes_total <= opt.box_budget;
  rep.sampled = !exhaustive;

  long best_count = std::numeric_limits<long>::max();
  std::vector<int> best_offsets;
  std::vector<const BitBlocks*> masks(active.size(), nullptr);

  auto evaluate = [&](const std::vector<int>& offsets) {
    for (std::size_t a = 0; a < active.size(); ++a) {
      masks[a] = &slabs[a][static_cast<std::size_t>(offsets[a] + 1)];
    }
    long cnt = BitBlocks::and_count(masks, nc);
    if (cnt < best_count) {
      best_count = cnt;
      best_offsets = offsets;
    }
  };

  std::vector<int> offsets(active.size(), 0);
  if (exhaustive) {
    // Mixed-radix enumeration, column 0 most significant.
    rep.boxes_evaluated = rep.boxes_total;
    for (long idx = 0; idx < rep.boxes_total; ++idx) {
      long rem = idx;
      for (int a = ka - 1; a >= 0; --a) {
        offsets[static_cast<std::size_t>(a)] = static_cast<int>(rem % 3) - 1;
        rem /= 3;
      }
      evaluate(offsets);
    }
  } else {
    // Centered box first, then a seeded uniform sample of the grid.
    Rng rng(mix_seed({opt.seed, 0xb0c35ULL}));
    rep.boxes_evaluated = opt.box_budget;
    evaluate(offsets);
    for (long s = 1; s < opt.box_budget; ++s) {
      for (std::size_t a = 0; a < active.size(); ++a) {
        offsets[a] = static_cast<int>(rng.below(3)) - 1;
      }
      evaluate(offsets);
    }
  }

  rep.rho = static_cast<double>(best_count) / static_cast<double>(nc);
  rep.se = std::sqrt(std::max(0.0, rep.rho * (1.0 - rep.rho)) /
                     static_cast<double>(nc));
  rep.vacuous = best_count == 0;
  for (std::size_t a = 0; a < active.size(); ++a) {
    std::size_t k = active[a];
    rep.argmin_center[k] =
        rep.treated_mean[k] + kOffsetScale * spec.delta[k] * best_offsets[a];
  }
  return rep;
}

std::optional<long> sample_size_bound(double rho, double delta0, int k) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("sample_size_bound: rho must be in [0, 1]");
  }
  if (!(delta0 > 0.0 && delta0 < 1.0)) {
    throw std::invalid_argument(
        "sample_size_bound: delta0 must be in (0, 1)");
  }
  if (k < 0) {
    throw std::invalid_argument("sample_size_bound: k must be >= 0");
  }
  if (rho == 0.0 || rho == 1.0) return std::nullopt;
  double target = std::log(delta0) - static_cast<double>(k) * std::log(2.0);
  double denom = std::log1p(-rho);
  double raw = target / denom;
  long bound = static_cast<long>(std::ceil(raw));
  return std::max<long>(bound, 1);
}

OverlapReport overlap_report(const std::vector<double>& pi, int k, long n,
                             double r_pi, double c_const) {
  if (pi.empty()) {
    throw std::invalid_argument("overlap_report: pi must be nonempty");
  }
  if (k < 1 || n < 1) {
    throw std::invalid_argument("overlap_report: k and n must be >= 1");
  }
  if (c_const < 0.0) {
    throw std::invalid_argument("overlap_report: c_const must be >= 0");
  }
  OverlapReport rep;
  rep.c_const = c_const;
  rep.r_pi = r_pi;
  double c3 = std::numeric_limits<double>::infinity();
  for (double p : pi) {
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument(
          "overlap_report: propensities must lie strictly in (0, 1)");
    }
    c3 = std::min(c3, std::min(p, 1.0 - p));
  }
  rep.c3 = c3;
  double denom = std::log(static_cast<double>(k)) +
                 static_cast<double>(n) *
                     std::pow(static_cast<double>(k), -r_pi);
  rep.threshold = c_const / denom;
  rep.pass = rep.c3 >= rep.threshold;
  return rep;
}

}  // namespace balmatch
