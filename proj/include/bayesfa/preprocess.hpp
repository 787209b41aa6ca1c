// Data ingestion and screening: strict CSV reader/writer, natural-log
// transform, standardization, Pearson correlations, and the KMO sampling
// adequacy measure.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <charconv>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bayesfa/types.hpp"

namespace bayesfa {

namespace detail {

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    const auto a = f.find_first_not_of(" \t");
    const auto b = f.find_last_not_of(" \t");
    f = (a == std::string::npos) ? std::string() : f.substr(a, b - a + 1);
  }
  return out;
}

}  // namespace detail

// Header row of unique names, '.' decimal separator, every value a finite
// number; anything else raises a DataError naming the offending row/column.
inline Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: empty input, header row required");
  Dataset ds;
  std::set<std::string> seen;
  for (const auto& name : detail::split_csv_line(line)) {
    if (name.empty()) throw DataError("csv: empty column name in header");
    if (!seen.insert(name).second)
      throw DataError("csv: duplicate column name '" + name + "'");
    ds.columns.push_back({name, false});
  }
  const int p = static_cast<int>(ds.columns.size());
  std::vector<double> buffer;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() && in.peek() == std::istream::traits_type::eof()) break;
    const auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != p)
      throw DataError("csv: row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(p));
    for (int j = 0; j < p; ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size() || !std::isfinite(v))
        throw DataError("csv: row " + std::to_string(row) + ", column '" +
                        ds.columns[j].name + "': not a finite number: '" + f + "'");
      buffer.push_back(v);
    }
  }
  if (row == 0) throw DataError("csv: no data rows");
  ds.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>(buffer.data(), row, p);
  return ds;
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  for (int j = 0; j < ds.p(); ++j)
    out << (j ? "," : "") << ds.columns[j].name;
  out << "\n";
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.p(); ++j)
      out << (j ? "," : "") << detail::format_double(ds.values(i, j));
    out << "\n";
  }
}

// Natural log of the selected columns; requires strictly positive values
// and refuses columns already transformed.
inline Dataset log_transform(Dataset ds, const std::vector<std::string>& names) {
  for (const auto& name : names) {
    const int j = ds.column_index(name);
    if (ds.columns[j].log_transformed)
      throw DataError("log transform: column '" + name + "' already transformed");
    for (int i = 0; i < ds.n(); ++i) {
      if (!(ds.values(i, j) > 0.0))
        throw DataError("log transform: column '" + name + "', row " +
                        std::to_string(i + 1) + ": value " +
                        detail::format_double(ds.values(i, j)) + " not positive");
      ds.values(i, j) = std::log(ds.values(i, j));
    }
    ds.columns[j].log_transformed = true;
  }
  return ds;
}

// Center and scale each column to mean 0, variance 1 (n - 1 denominator).
inline Dataset standardize(Dataset ds) {
  const int n = ds.n();
  if (n < 2) throw DataError("standardize: need at least 2 rows");
  for (int j = 0; j < ds.p(); ++j) {
    const double mean = ds.values.col(j).mean();
    const double ss = (ds.values.col(j).array() - mean).square().sum();
    const double sd = std::sqrt(ss / (n - 1));
    if (!(sd > 0.0))
      throw DataError("standardize: column '" + ds.columns[j].name +
                      "' is constant");
    ds.values.col(j) = (ds.values.col(j).array() - mean) / sd;
  }
  ds.standardized = true;
  return ds;
}

struct KmoResult {
  std::optional<double> value;
  std::string note;
};

struct CorrelationMatrix {
  Eigen::MatrixXd r;
  KmoResult kmo;
  bool nonsingular = false;
  double eigen_ratio = 0.0;  // smallest / largest eigenvalue

  int p() const { return static_cast<int>(r.rows()); }
};

// Kaiser-Meyer-Olkin measure from a correlation matrix: ratio of squared
// correlations to squared correlations plus squared partial correlations.
// Undefined (reported, not an error) when the matrix is near singular or
// when there is no off-diagonal correlation at all.
inline KmoResult kmo(const Eigen::MatrixXd& r,
                     double singular_tol = 1e-8) {
  const int p = static_cast<int>(r.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  const double emin = es.eigenvalues().minCoeff();
  const double emax = es.eigenvalues().maxCoeff();
  if (!(emin > singular_tol * emax))
    return {std::nullopt, "correlation matrix is numerically singular"};
  const Eigen::MatrixXd inv = r.inverse();
  double sum_r2 = 0.0, sum_q2 = 0.0;
  for (int j = 0; j < p; ++j)
    for (int k = 0; k < p; ++k) {
      if (j == k) continue;
      sum_r2 += r(j, k) * r(j, k);
      const double q = -inv(j, k) / std::sqrt(inv(j, j) * inv(k, k));
      sum_q2 += q * q;
    }
  if (sum_r2 + sum_q2 == 0.0)
    return {std::nullopt, "no common variance (all off-diagonal correlations zero)"};
  return {sum_r2 / (sum_r2 + sum_q2), ""};
}

// Kaiser's verbal label for a KMO value; reported alongside the number,
// never used as a go/no-go decision.
inline std::string kmo_label(double v) {
  if (v >= 0.9) return "marvelous";
  if (v >= 0.8) return "meritorious";
  if (v >= 0.7) return "middling";
  if (v >= 0.6) return "mediocre";
  if (v >= 0.5) return "miserable";
  return "unacceptable";
}

inline CorrelationMatrix correlation_matrix(const Dataset& ds,
                                            double singular_tol = 1e-8) {
  const int n = ds.n();
  const int p = ds.p();
  if (n < 3) throw DataError("correlation: need at least 3 rows");
  if (p < 2) throw DataError("correlation: need at least 2 columns");
  Eigen::MatrixXd z = ds.values;
  for (int j = 0; j < p; ++j) {
    const double mean = z.col(j).mean();
    const double ss = (z.col(j).array() - mean).square().sum();
    if (!(ss > 0.0))
      throw DataError("correlation: column '" + ds.columns[j].name +
                      "' is constant");
    z.col(j) = (z.col(j).array() - mean) / std::sqrt(ss);
  }
  CorrelationMatrix out;
  out.r = z.transpose() * z;
  out.r.diagonal().setOnes();
  out.r = 0.5 * (out.r + out.r.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.r);
  out.eigen_ratio = es.eigenvalues().minCoeff() / es.eigenvalues().maxCoeff();
  out.nonsingular = es.eigenvalues().minCoeff() >
                    singular_tol * es.eigenvalues().maxCoeff();
  out.kmo = kmo(out.r, singular_tol);
  return out;
}

}  // namespace bayesfa
