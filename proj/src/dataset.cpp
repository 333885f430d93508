#include "balmatch/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace balmatch {

std::vector<int> Dataset::rows_with_z(int z) const {
  std::vector<int> rows;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].z == z) rows.push_back(static_cast<int>(i));
  }
  return rows;
}

std::size_t Dataset::count_z(int z) const {
  std::size_t c = 0;
  for (const auto& u : units) {
    if (u.z == z) ++c;
  }
  return c;
}

void validate_dataset(const Dataset& ds) {
  std::unordered_set<std::string> seen;
  seen.reserve(ds.units.size());
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const Unit& u = ds.units[i];
    if (u.id.empty()) {
      throw std::invalid_argument("unit " + std::to_string(i + 1) + ": empty id");
    }
    if (!seen.insert(u.id).second) {
      throw std::invalid_argument("duplicate id '" + u.id + "'");
    }
    if (u.z != 0 && u.z != 1) {
      throw std::invalid_argument("unit '" + u.id + "': z must be 0 or 1");
    }
    if (!std::isfinite(u.y)) {
      throw std::invalid_argument("unit '" + u.id + "': non-finite outcome");
    }
    if (static_cast<int>(u.x.size()) != ds.dim) {
      throw std::invalid_argument("unit '" + u.id + "': covariate length " +
                                  std::to_string(u.x.size()) + " != dim " +
                                  std::to_string(ds.dim));
    }
    for (double v : u.x) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("unit '" + u.id + "': non-finite covariate");
      }
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double_field(const std::string& field, std::size_t row,
                          const std::string& what) {
  if (field.empty()) {
    throw std::invalid_argument("row " + std::to_string(row) + ": missing " + what);
  }
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw std::invalid_argument("row " + std::to_string(row) + ": cannot parse " +
                                what + " from '" + field + "'");
  }
  return value;
}

int parse_z_field(const std::string& field, std::size_t row) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  throw std::invalid_argument("row " + std::to_string(row) +
                              ": z must be 0 or 1, got '" + field + "'");
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "' for reading");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("'" + path + "': empty file");
  }
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "z" ||
      header[2] != "y") {
    throw std::invalid_argument("'" + path +
                                "': header must be id,z,y,x1,...,xd");
  }
  const int dim = static_cast<int>(header.size()) - 3;
  for (int j = 0; j < dim; ++j) {
    if (header[3 + j] != "x" + std::to_string(j + 1)) {
      throw std::invalid_argument("'" + path + "': covariate column " +
                                  std::to_string(j + 4) + " must be named x" +
                                  std::to_string(j + 1));
    }
  }

  Dataset ds;
  ds.dim = dim;
  std::size_t row = 1;  // header consumed
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw std::invalid_argument("row " + std::to_string(row) + ": expected " +
                                  std::to_string(header.size()) +
                                  " fields, got " + std::to_string(fields.size()));
    }
    Unit u;
    u.id = fields[0];
    if (u.id.empty()) {
      throw std::invalid_argument("row " + std::to_string(row) + ": missing id");
    }
    u.z = parse_z_field(fields[1], row);
    u.y = parse_double_field(fields[2], row, "outcome");
    u.x.resize(dim);
    for (int j = 0; j < dim; ++j) {
      u.x[j] = parse_double_field(fields[3 + j], row, "covariate x" +
                                  std::to_string(j + 1));
    }
    ds.units.push_back(std::move(u));
  }
  validate_dataset(ds);
  return ds;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Trim to the shortest representation that still round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[40];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    double back = 0.0;
    auto res = std::from_chars(shorter, shorter + std::strlen(shorter), back);
    if (res.ec == std::errc() && back == v) return shorter;
  }
  return buf;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open '" + path + "' for writing");
  }
  out << "id,z,y";
  for (int j = 0; j < ds.dim; ++j) out << ",x" << (j + 1);
  out << "\n";
  for (const Unit& u : ds.units) {
    out << u.id << ',' << u.z << ',' << format_double(u.y);
    for (double v : u.x) out << ',' << format_double(v);
    out << "\n";
  }
  if (!out.good()) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

Summary summarize(const Dataset& ds) {
  Summary s;
  s.n = ds.n();
  s.n_treated = ds.count_z(1);
  s.n_control = ds.count_z(0);
  if (s.n_treated == 0 || s.n_control == 0) {
    throw std::invalid_argument("summarize requires at least one unit per group");
  }
  s.treated_mean.assign(ds.dim, 0.0);
  s.control_mean.assign(ds.dim, 0.0);
  for (const Unit& u : ds.units) {
    auto& acc = (u.z == 1) ? s.treated_mean : s.control_mean;
    for (int j = 0; j < ds.dim; ++j) acc[j] += u.x[j];
  }
  for (int j = 0; j < ds.dim; ++j) {
    s.treated_mean[j] /= static_cast<double>(s.n_treated);
    s.control_mean[j] /= static_cast<double>(s.n_control);
  }
  s.mean_diff.resize(ds.dim);
  for (int j = 0; j < ds.dim; ++j) {
    s.mean_diff[j] = s.treated_mean[j] - s.control_mean[j];
  }
  return s;
}

}  // namespace balmatch
