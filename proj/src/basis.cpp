#include "balmatch/basis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace balmatch {

namespace {

// Index subsets of {0..d-1} with sizes 2..order, size-major then
// lexicographic, used for interaction columns.
std::vector<std::vector<int>> interaction_subsets(int d, int order) {
  std::vector<std::vector<int>> out;
  for (int size = 2; size <= order; ++size) {
    if (size > d) break;
    std::vector<int> idx(size);
    for (int i = 0; i < size; ++i) idx[i] = i;
    while (true) {
      out.push_back(idx);
      int pos = size - 1;
      while (pos >= 0 && idx[pos] == d - size + pos) --pos;
      if (pos < 0) break;
      ++idx[pos];
      for (int i = pos + 1; i < size; ++i) idx[i] = idx[i - 1] + 1;
    }
  }
  return out;
}

}  // namespace

BasisSpec BasisSpec::parse(const std::string& text) {
  BasisSpec spec;
  std::string body = text;
  const auto plus = body.rfind("+int");
  if (plus != std::string::npos && plus == body.size() - 4) {
    spec.include_intercept = true;
    body = body.substr(0, plus);
  }
  const auto colon = body.find(':');
  const std::string head = body.substr(0, colon);
  const std::string arg =
      colon == std::string::npos ? std::string() : body.substr(colon + 1);
  if (head == "raw") {
    spec.kind = BasisKind::raw;
    if (!arg.empty()) throw std::invalid_argument("raw basis takes no argument");
  } else if (head == "poly") {
    spec.kind = BasisKind::polynomial;
    spec.degree = arg.empty() ? 2 : std::stoi(arg);
  } else if (head == "spline") {
    spec.kind = BasisKind::spline;
    if (arg.empty()) throw std::invalid_argument("spline basis needs knots");
    std::size_t pos = 0;
    while (pos < arg.size()) {
      auto comma = arg.find(',', pos);
      if (comma == std::string::npos) comma = arg.size();
      spec.knots.push_back(std::stod(arg.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  } else if (head == "inter") {
    spec.kind = BasisKind::interactions;
    spec.order = arg.empty() ? 2 : std::stoi(arg);
  } else {
    throw std::invalid_argument("unknown basis '" + text + "'");
  }
  return spec;
}

std::string BasisSpec::to_string() const {
  std::string out;
  switch (kind) {
    case BasisKind::raw:
      out = "raw";
      break;
    case BasisKind::polynomial:
      out = "poly:" + std::to_string(degree);
      break;
    case BasisKind::spline: {
      out = "spline:";
      for (std::size_t i = 0; i < knots.size(); ++i) {
        if (i) out += ',';
        out += format_double(knots[i]);
      }
      break;
    }
    case BasisKind::interactions:
      out = "inter:" + std::to_string(order);
      break;
  }
  if (include_intercept) out += "+int";
  return out;
}

BasisMatrix expand(const Dataset& ds, const BasisSpec& spec) {
  if (ds.units.empty()) throw std::invalid_argument("expand: empty dataset");
  if (ds.dim <= 0) throw std::invalid_argument("expand: dataset has no covariates");
  const int d = ds.dim;

  switch (spec.kind) {
    case BasisKind::raw:
      break;
    case BasisKind::polynomial:
      if (spec.degree < 1) throw std::invalid_argument("expand: degree must be >= 1");
      break;
    case BasisKind::spline: {
      if (spec.knots.empty()) throw std::invalid_argument("expand: spline needs knots");
      if (!std::is_sorted(spec.knots.begin(), spec.knots.end())) {
        throw std::invalid_argument("expand: knots must be sorted ascending");
      }
      break;
    }
    case BasisKind::interactions:
      if (spec.order < 1) throw std::invalid_argument("expand: order must be >= 1");
      break;
  }

  std::vector<std::string> names;
  if (spec.include_intercept) names.push_back("1");
  std::vector<std::vector<int>> subsets;
  switch (spec.kind) {
    case BasisKind::raw:
      for (int j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
      break;
    case BasisKind::polynomial:
      for (int j = 0; j < d; ++j) {
        for (int p = 1; p <= spec.degree; ++p) {
          std::string nm = "x" + std::to_string(j + 1);
          if (p > 1) nm += "^" + std::to_string(p);
          names.push_back(nm);
        }
      }
      break;
    case BasisKind::spline:
      for (int j = 0; j < d; ++j) {
        const std::string base = "x" + std::to_string(j + 1);
        names.push_back(base);
        for (double t : spec.knots) {
          names.push_back("(" + base + "-" + format_double(t) + ")+");
        }
      }
      break;
    case BasisKind::interactions: {
      for (int j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
      subsets = interaction_subsets(d, spec.order);
      for (const auto& sub : subsets) {
        std::string nm;
        for (std::size_t i = 0; i < sub.size(); ++i) {
          if (i) nm += "*";
          nm += "x" + std::to_string(sub[i] + 1);
        }
        names.push_back(nm);
      }
      break;
    }
  }

  const std::size_t n = ds.n();
  const int K = static_cast<int>(names.size());
  BasisMatrix bm;
  bm.spec = spec;
  bm.column_names = names;
  bm.values.resize(static_cast<Eigen::Index>(n), K);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = ds.units[i].x;
    int col = 0;
    if (spec.include_intercept) bm.values(i, col++) = 1.0;
    switch (spec.kind) {
      case BasisKind::raw:
        for (int j = 0; j < d; ++j) bm.values(i, col++) = x[j];
        break;
      case BasisKind::polynomial:
        for (int j = 0; j < d; ++j) {
          double v = 1.0;
          for (int p = 1; p <= spec.degree; ++p) {
            v *= x[j];
            bm.values(i, col++) = v;
          }
        }
        break;
      case BasisKind::spline:
        for (int j = 0; j < d; ++j) {
          bm.values(i, col++) = x[j];
          for (double t : spec.knots) {
            bm.values(i, col++) = std::max(0.0, x[j] - t);
          }
        }
        break;
      case BasisKind::interactions: {
        for (int j = 0; j < d; ++j) bm.values(i, col++) = x[j];
        for (const auto& sub : subsets) {
          double v = 1.0;
          for (int j : sub) v *= x[j];
          bm.values(i, col++) = v;
        }
        break;
      }
    }
  }

  if (static_cast<std::size_t>(K) > n) {
    bm.warnings.push_back("basis has K=" + std::to_string(K) +
                          " columns but only n=" + std::to_string(n) +
                          " rows; moment conditions are degenerate");
  }
  return bm;
}

RegularityReport check_regularity(const BasisMatrix& bm) {
  RegularityReport rep;
  const auto n = static_cast<double>(bm.values.rows());
  rep.sup_row_norm = bm.values.rowwise().norm().maxCoeff();
  const Eigen::MatrixXd gram =
      (bm.values.transpose() * bm.values) / n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("check_regularity: eigen decomposition failed");
  }
  rep.min_eigenvalue = es.eigenvalues().minCoeff();
  rep.operator_norm = es.eigenvalues().maxCoeff();
  rep.degenerate = rep.min_eigenvalue < 1e-10;
  rep.k_exceeds_root_n = bm.k() > std::sqrt(n);
  rep.k_exceeds_n = bm.k() > bm.values.rows();
  return rep;
}

}  // namespace balmatch
