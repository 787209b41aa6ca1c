// Shared value types: dataset, factor-model restriction pattern, parameter
// sets, prior settings, draw containers, and the error taxonomy mapped to
// CLI exit codes (config=2, data=3, numerical=4).
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace bayesfa {

inline constexpr char kVersion[] = "1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Positioned parse failure for the constraint language and config files.
struct ParseError : ConfigError {
  ParseError(std::string message, int line, int column)
      : ConfigError("line " + std::to_string(line) + ", column " +
                    std::to_string(column) + ": " + message),
        line(line),
        column(column) {}
  int line;
  int column;
};

struct ColumnInfo {
  std::string name;
  bool log_transformed = false;
};

struct Dataset {
  Eigen::MatrixXd values;  // n x p
  std::vector<ColumnInfo> columns;
  bool standardized = false;

  int n() const { return static_cast<int>(values.rows()); }
  int p() const { return static_cast<int>(values.cols()); }

  int column_index(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].name == name) return static_cast<int>(j);
    throw DataError("unknown column '" + name + "'");
  }
};

// 1-based (row, column) loading cell, matching the L[j,k] notation.
struct CellRef {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellRef&, const CellRef&) = default;
  friend auto operator<=>(const CellRef&, const CellRef&) = default;
};

// Restriction pattern of the unrestricted confirmatory factor model:
// zero cells pin loadings to 0, positive cells truncate them above 0.
struct UcfmSpec {
  int p = 0;
  int m = 0;
  std::vector<CellRef> zero_cells;
  std::vector<CellRef> positive_cells;

  bool is_zero(int row, int col) const {
    return std::find(zero_cells.begin(), zero_cells.end(), CellRef{row, col}) !=
           zero_cells.end();
  }
  bool is_positive(int row, int col) const {
    return std::find(positive_cells.begin(), positive_cells.end(),
                     CellRef{row, col}) != positive_cells.end();
  }
  friend bool operator==(const UcfmSpec&, const UcfmSpec&) = default;
};

struct PriorSpec {
  double loading_variance = 100.0;  // free Lambda and mu cells
  double psi_shape = 0.01;          // inverse gamma on uniquenesses
  double psi_rate = 0.01;
  int phi_df = 0;                   // 0 means the default m + 2
  double training_fraction = 0.25;

  int effective_phi_df(int m) const { return phi_df > 0 ? phi_df : m + 2; }
};

struct FactorParams {
  Eigen::VectorXd mu;      // p
  Eigen::MatrixXd lambda;  // p x m
  Eigen::VectorXd psi;     // p uniquenesses
  Eigen::MatrixXd phi;     // m x m correlation
};

// Number of free scalar parameters (mu + free loadings + psi + phi lower
// triangle): the training-sample sizing rule works from this count.
inline int free_parameter_count(const UcfmSpec& spec) {
  const int zeros = static_cast<int>(spec.zero_cells.size());
  return spec.p + (spec.p * spec.m - zeros) + spec.p + spec.m * (spec.m - 1) / 2;
}

struct ChainSettings {
  int iterations = 50000;
  int burn_in = 10000;
  int chains = 1;
  bool store_scores = false;
};

// Retained draws, one row per kept iteration, columns in the documented
// flat order mu, vec(Lambda), diag(Psi), lower-triangle(Phi).
struct PosteriorDraws {
  UcfmSpec spec;
  Eigen::MatrixXd samples;
  std::uint64_t seed = 0;
  ChainSettings settings;
  std::vector<Eigen::MatrixXd> scores;  // optional per-draw factor scores
  double phi_accept_rate = 1.0;

  int count() const { return static_cast<int>(samples.rows()); }
};

struct PriorDraws {
  UcfmSpec spec;
  Eigen::MatrixXd samples;  // same flat layout as PosteriorDraws
  std::uint64_t seed = 0;

  int count() const { return static_cast<int>(samples.rows()); }
};

// Largest m with (p - m)^2 >= p + m, the existence bound for a consistent
// uniqueness decomposition; empty when even m = 1 fails (p < 3).
inline std::optional<int> factor_upper_bound(int p) {
  std::optional<int> best;
  for (int m = 1; m <= p; ++m) {
    const double lhs = static_cast<double>(p - m) * (p - m);
    if (lhs - p - m >= 0.0) best = m;
  }
  return best;
}

// Structural checks on the restriction pattern. Violations are reported as
// data, not thrown: each entry is one human-readable finding.
inline std::vector<std::string> validate_spec(const UcfmSpec& spec) {
  std::vector<std::string> out;
  if (spec.p < 1) out.push_back("dimension: p must be at least 1");
  if (spec.m < 1) out.push_back("dimension: m must be at least 1");
  if (spec.p < 1 || spec.m < 1) return out;

  const double bound = static_cast<double>(spec.p - spec.m) * (spec.p - spec.m) -
                       spec.p - spec.m;
  if (bound < 0.0)
    out.push_back("existence bound: (p-m)^2 - p - m = " + std::to_string(bound) +
                  " < 0 for p = " + std::to_string(spec.p) + ", m = " +
                  std::to_string(spec.m));

  std::set<std::pair<int, int>> zero_set, pos_set;
  for (const auto& c : spec.zero_cells) {
    if (c.row < 1 || c.row > spec.p || c.col < 1 || c.col > spec.m)
      out.push_back("cell out of range: zero cell L[" + std::to_string(c.row) +
                    "," + std::to_string(c.col) + "]");
    else if (!zero_set.insert({c.row, c.col}).second)
      out.push_back("cell conflict: duplicate zero cell L[" + std::to_string(c.row) +
                    "," + std::to_string(c.col) + "]");
  }
  for (const auto& c : spec.positive_cells) {
    if (c.row < 1 || c.row > spec.p || c.col < 1 || c.col > spec.m)
      out.push_back("cell out of range: positive cell L[" + std::to_string(c.row) +
                    "," + std::to_string(c.col) + "]");
    else if (!pos_set.insert({c.row, c.col}).second)
      out.push_back("cell conflict: duplicate positive cell L[" +
                    std::to_string(c.row) + "," + std::to_string(c.col) + "]");
    else if (zero_set.count({c.row, c.col}))
      out.push_back("cell conflict: L[" + std::to_string(c.row) + "," +
                    std::to_string(c.col) + "] is both zero and positive");
  }
  if (!out.empty()) return out;

  // Accepted patterns: (a) every cell zero (the no-common-factor null model
  // used as a baseline), or (b) one anchor row per factor carrying that
  // factor's positive cell and zeros in all other columns, which gives the
  // m(m-1) zero cells + m polarity truncations of the minimal conditions.
  if (static_cast<int>(zero_set.size()) == spec.p * spec.m && pos_set.empty())
    return out;

  if (static_cast<int>(pos_set.size()) != spec.m) {
    out.push_back("minimal conditions: expected exactly one positive cell per "
                  "factor (" + std::to_string(spec.m) + "), found " +
                  std::to_string(pos_set.size()));
    return out;
  }
  std::set<int> anchor_rows, anchored_factors;
  for (const auto& [row, col] : pos_set) {
    if (!anchored_factors.insert(col).second)
      out.push_back("minimal conditions: factor " + std::to_string(col) +
                    " has more than one positive cell");
    if (!anchor_rows.insert(row).second)
      out.push_back("minimal conditions: row " + std::to_string(row) +
                    " anchors more than one factor");
    for (int other = 1; other <= spec.m; ++other) {
      if (other == col) continue;
      if (!zero_set.count({row, other}))
        out.push_back("minimal conditions: anchor row " + std::to_string(row) +
                      " needs zero cell L[" + std::to_string(row) + "," +
                      std::to_string(other) + "]");
    }
  }
  if (static_cast<int>(zero_set.size()) != spec.m * (spec.m - 1))
    out.push_back("minimal conditions: expected " +
                  std::to_string(spec.m * (spec.m - 1)) +
                  " zero cells (anchor rows only), found " +
                  std::to_string(zero_set.size()));
  return out;
}

// Numerical checks on one parameter set against its pattern.
inline std::vector<std::string> validate_params(const FactorParams& params,
                                                const UcfmSpec& spec,
                                                double tol = 1e-8) {
  std::vector<std::string> out;
  if (params.mu.size() != spec.p) out.push_back("mu: wrong length");
  if (params.lambda.rows() != spec.p || params.lambda.cols() != spec.m)
    out.push_back("lambda: wrong shape");
  if (params.psi.size() != spec.p) out.push_back("psi: wrong length");
  if (params.phi.rows() != spec.m || params.phi.cols() != spec.m)
    out.push_back("phi: wrong shape");
  if (!out.empty()) return out;

  for (int j = 0; j < spec.p; ++j)
    if (!(params.psi[j] > 0.0))
      out.push_back("psi: entry " + std::to_string(j + 1) + " not positive");
  for (const auto& c : spec.zero_cells)
    if (params.lambda(c.row - 1, c.col - 1) != 0.0)
      out.push_back("lambda: zero cell L[" + std::to_string(c.row) + "," +
                    std::to_string(c.col) + "] not exactly zero");
  for (const auto& c : spec.positive_cells)
    if (!(params.lambda(c.row - 1, c.col - 1) > 0.0))
      out.push_back("lambda: positive cell L[" + std::to_string(c.row) + "," +
                    std::to_string(c.col) + "] not positive");
  if (!params.phi.isApprox(params.phi.transpose(), tol))
    out.push_back("phi: not symmetric");
  for (int k = 0; k < spec.m; ++k)
    if (std::abs(params.phi(k, k) - 1.0) > tol)
      out.push_back("phi: diagonal entry " + std::to_string(k + 1) + " not 1");
  Eigen::LLT<Eigen::MatrixXd> llt(params.phi);
  if (llt.info() != Eigen::Success)
    out.push_back("phi: not positive definite");
  return out;
}

}  // namespace bayesfa
