// Posterior summaries and the report bundle: fixed-layout text plus TSV
// tables rendered deterministically from results, so re-rendering the same
// inputs reproduces every file byte for byte.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "bayesfa/compare.hpp"
#include "bayesfa/dimension.hpp"
#include "bayesfa/model.hpp"
#include "bayesfa/preprocess.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q500 = 0.0;
  double q975 = 0.0;
};

// One row per packed parameter, in the draw layout order, with equal-tailed
// 95% intervals.
inline std::vector<ParameterSummary> posterior_summary(const PosteriorDraws& draws) {
  const auto names = packed_names(draws.spec);
  const int g = draws.count();
  if (g < 2) throw DataError("posterior_summary: need at least 2 draws");
  std::vector<ParameterSummary> out;
  out.reserve(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    ParameterSummary s;
    s.name = names[c];
    const auto col = draws.samples.col(static_cast<int>(c));
    s.mean = col.mean();
    s.sd = std::sqrt((col.array() - s.mean).square().sum() / (g - 1));
    std::vector<double> v(col.data(), col.data() + g);
    s.q025 = detail::quantile(v, 0.025);
    s.q500 = detail::quantile(v, 0.5);
    s.q975 = detail::quantile(v, 0.975);
    out.push_back(std::move(s));
  }
  return out;
}

struct ReproducedCovariance {
  Eigen::MatrixXd reproduced;  // posterior mean of Lambda Phi Lambda' + Psi
  Eigen::MatrixXd residual;    // sample covariance minus reproduced
  double max_abs_residual = 0.0;
};

inline ReproducedCovariance reproduced_residual(const PosteriorDraws& draws,
                                                const Eigen::MatrixXd& data) {
  const int p = draws.spec.p;
  if (static_cast<int>(data.cols()) != p)
    throw DataError("reproduced_residual: data has " + std::to_string(data.cols()) +
                    " columns, draws expect " + std::to_string(p));
  const int n = static_cast<int>(data.rows());
  if (n < 2) throw DataError("reproduced_residual: need at least 2 rows");

  ReproducedCovariance out;
  out.reproduced = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < draws.count(); ++i) {
    const FactorParams params =
        unpack_params(draws.samples.row(i).transpose(), draws.spec);
    out.reproduced += implied_covariance(params);
  }
  out.reproduced /= draws.count();

  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  const Eigen::MatrixXd sample_cov =
      centered.transpose() * centered / (n - 1);
  out.residual = sample_cov - out.reproduced;
  out.max_abs_residual = out.residual.array().abs().maxCoeff();
  return out;
}

struct ReportBundle {
  Dataset dataset;  // the data every completed stage ran on
  std::optional<CorrelationMatrix> screening;
  std::optional<DimensionResult> dimension;
  std::optional<PosteriorDraws> fit;
  std::optional<ModelComparison> comparison;
  std::uint64_t seed = 0;  // the run seed every stage seed derives from
};

namespace report_detail {

inline std::string num(double x) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  std::string s(buf);
  return s == "-0.000" ? "0.000" : s;
}

inline std::string interval(double lo, double hi) {
  return "[" + num(lo) + ", " + num(hi) + "]";
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::uint64_t data_digest(const Eigen::MatrixXd& values) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](const void* ptr, std::size_t bytes) {
    const auto* b = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  const std::int64_t rows = values.rows(), cols = values.cols();
  mix(&rows, sizeof rows);
  mix(&cols, sizeof cols);
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double v = values(i, j);
      mix(&v, sizeof v);
    }
  return h;
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("report: cannot write " + path.string());
  out << body;
  if (!out) throw DataError("report: failed writing " + path.string());
}

inline std::string matrix_tsv(const Eigen::MatrixXd& m,
                              const std::vector<ColumnInfo>& columns) {
  std::string body = "variable";
  for (const auto& c : columns) body += "\t" + c.name;
  body += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    body += columns[i].name;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      body += "\t" + detail::format_double(m(i, j));
    body += "\n";
  }
  return body;
}

inline const ParameterSummary& find_summary(
    const std::vector<ParameterSummary>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw DataError("report: no summary row named " + name);
}

inline std::string cell_list(const std::vector<CellRef>& cells) {
  std::string s;
  for (const auto& c : cells) {
    if (!s.empty()) s += " ";
    s += "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")";
  }
  return s.empty() ? "none" : s;
}

}  // namespace report_detail

// Long-format loading table: one row per loading cell, full precision.
inline std::string loadings_table(const std::vector<ParameterSummary>& summary,
                                  const UcfmSpec& spec,
                                  const std::vector<ColumnInfo>& cols) {
  std::string body = "variable\tfactor\tmean\tsd\tq025\tq500\tq975\n";
  for (int k = 1; k <= spec.m; ++k)
    for (int j = 1; j <= spec.p; ++j) {
      const auto& s = report_detail::find_summary(
          summary, "lambda[" + std::to_string(j) + "," + std::to_string(k) + "]");
      body += cols[j - 1].name + "\t" + std::to_string(k) + "\t" +
              detail::format_double(s.mean) + "\t" + detail::format_double(s.sd) +
              "\t" + detail::format_double(s.q025) + "\t" +
              detail::format_double(s.q500) + "\t" +
              detail::format_double(s.q975) + "\n";
    }
  return body;
}

inline std::string dimension_table(const DimensionResult& dim) {
  std::string body =
      "m\tlog_marginal\tpmp\trank_pass\tsmallest_q05\tlargest_q50\t"
      "phi_accept_rate\tselected\n";
  for (std::size_t i = 0; i < dim.candidates.size(); ++i) {
    const auto& c = dim.candidates[i];
    body += std::to_string(c.spec.m) + "\t" +
            detail::format_double(c.log_marginal) + "\t" +
            detail::format_double(dim.pmp[i]) + "\t" +
            (c.rank.pass ? "1" : "0") + "\t" +
            detail::format_double(c.rank.smallest_q05) + "\t" +
            detail::format_double(c.rank.largest_q50) + "\t" +
            detail::format_double(c.phi_accept_rate) + "\t" +
            (c.spec.m == dim.selected_m ? "1" : "0") + "\n";
  }
  return body;
}

inline std::string comparison_table(const ModelComparison& cmp) {
  std::string body =
      "model\tposterior_hits\tposterior_total\tprior_hits\tprior_total\t"
      "posterior_fraction\tprior_fraction\tbayes_factor\tmc_se\tpmp\n";
  for (std::size_t i = 0; i < cmp.estimates.size(); ++i) {
    const auto& e = cmp.estimates[i];
    body += e.name + "\t" + std::to_string(e.posterior_hits) + "\t" +
            std::to_string(e.posterior_total) + "\t" +
            std::to_string(e.prior_hits) + "\t" + std::to_string(e.prior_total) +
            "\t" + detail::format_double(e.posterior_fraction) + "\t" +
            detail::format_double(e.prior_fraction) + "\t" +
            detail::format_double(e.bf) + "\t" + detail::format_double(e.mc_se) +
            "\t" + detail::format_double(cmp.pmp[i]) + "\n";
  }
  return body;
}

// Fixed-width dimension selection block for human-readable output.
inline std::string dimension_section(const DimensionResult& dim) {
  std::string t = "Dimension selection (training rows per split: " +
                  std::to_string(dim.train_size) + ")\n";
  t += "  m   log marginal   PMP      rank screen\n";
  for (std::size_t i = 0; i < dim.candidates.size(); ++i) {
    const auto& c = dim.candidates[i];
    char line[96];
    std::snprintf(line, sizeof line, "%c %d   %12.2f   %.4f   %s\n",
                  c.spec.m == dim.selected_m ? '*' : ' ', c.spec.m,
                  c.log_marginal, dim.pmp[i], c.rank.pass ? "pass" : "FAIL");
    t += line;
  }
  t += "Selected factor count: " + std::to_string(dim.selected_m) + "\n";
  return t;
}

// Fixed-width model comparison block for human-readable output.
inline std::string comparison_section(const ModelComparison& cmp) {
  namespace rd = report_detail;
  std::size_t w = 5;
  for (const auto& e : cmp.estimates) w = std::max(w, e.name.size());
  std::string t = "Constrained model comparison\n";
  t += "  " + rd::pad("model", w + 2) + "BF vs unconstrained   mc se     PMP\n";
  for (std::size_t i = 0; i < cmp.estimates.size(); ++i) {
    const auto& e = cmp.estimates[i];
    char line[96];
    std::snprintf(line, sizeof line, "%-19.4f   %-7.4f   %.4f\n", e.bf, e.mc_se,
                  cmp.pmp[i]);
    t += "  " + rd::pad(e.name, w + 2) + line;
  }
  return t;
}

// Writes summary.txt and provenance.txt always, loadings.tsv, reproduced.tsv
// and residual.tsv when a fit is present, dimension.tsv and comparison.tsv
// when those stages ran. A partial bundle renders only its completed
// sections. Existing files are overwritten.
inline void render_report(const std::filesystem::path& dir,
                          const ReportBundle& bundle) {
  namespace rd = report_detail;
  if (bundle.dataset.p() == 0)
    throw ConfigError("report: the bundle carries no dataset");
  if (bundle.fit && bundle.dataset.p() != bundle.fit->spec.p)
    throw ConfigError("report: dataset has " + std::to_string(bundle.dataset.p()) +
                      " columns, fitted pattern expects " +
                      std::to_string(bundle.fit->spec.p));
  std::filesystem::create_directories(dir);
  const auto& cols = bundle.dataset.columns;

  std::vector<ParameterSummary> summary;
  std::optional<ReproducedCovariance> repro;
  if (bundle.fit) {
    summary = posterior_summary(*bundle.fit);
    repro = reproduced_residual(*bundle.fit, bundle.dataset.values);
    rd::write_file(dir / "loadings.tsv",
                   loadings_table(summary, bundle.fit->spec, cols));
    rd::write_file(dir / "reproduced.tsv", rd::matrix_tsv(repro->reproduced, cols));
    rd::write_file(dir / "residual.tsv", rd::matrix_tsv(repro->residual, cols));
  }
  if (bundle.dimension)
    rd::write_file(dir / "dimension.tsv", dimension_table(*bundle.dimension));
  if (bundle.comparison)
    rd::write_file(dir / "comparison.tsv", comparison_table(*bundle.comparison));

  {  // summary.txt
    std::string t;
    t += "Bayesian factor analysis report\n";
    t += "===============================\n\n";
    t += "Data: " + std::to_string(bundle.dataset.n()) + " rows, " +
         std::to_string(bundle.dataset.p()) + " variables" +
         (bundle.dataset.standardized ? " (standardized)" : "") + "\n";
    if (bundle.screening) {
      const auto& scr = *bundle.screening;
      if (scr.kmo.value)
        t += "KMO sampling adequacy: " + rd::num(*scr.kmo.value) + " (" +
             kmo_label(*scr.kmo.value) + ")\n";
      else
        t += "KMO sampling adequacy: undefined (" + scr.kmo.note + ")\n";
      t += "Correlation eigenvalue ratio (min/max): " + rd::num(scr.eigen_ratio) +
           (scr.nonsingular ? "" : "  ** numerically singular **") + "\n";
    }
    t += "\n";

    if (bundle.dimension) t += dimension_section(*bundle.dimension) + "\n";

    if (bundle.fit) {
      const UcfmSpec& spec = bundle.fit->spec;
      t += "Fitted model: " + std::to_string(spec.p) + " variables, " +
           std::to_string(spec.m) + " factors, " +
           std::to_string(bundle.fit->count()) + " retained draws (" +
           std::to_string(bundle.fit->settings.chains) + " chain" +
           (bundle.fit->settings.chains == 1 ? "" : "s") + ", burn-in " +
           std::to_string(bundle.fit->settings.burn_in) + ")\n";
      if (spec.m > 1)
        t += "Correlation step acceptance rate: " +
             rd::num(bundle.fit->phi_accept_rate) + "\n";
      t += "\n";

      std::size_t name_width = 8;
      for (const auto& c : cols) name_width = std::max(name_width, c.name.size());
      t += "Loadings (posterior mean, 95% interval)\n";
      t += "  " + rd::pad("variable", name_width + 2);
      for (int k = 1; k <= spec.m; ++k)
        t += rd::pad("factor " + std::to_string(k), 26);
      t += "\n";
      for (int j = 1; j <= spec.p; ++j) {
        t += "  " + rd::pad(cols[j - 1].name, name_width + 2);
        for (int k = 1; k <= spec.m; ++k) {
          if (spec.is_zero(j, k)) {  // pinned cells carry no posterior
            t += rd::pad("-", 26);
            continue;
          }
          const auto& s = rd::find_summary(
              summary, "lambda[" + std::to_string(j) + "," + std::to_string(k) + "]");
          t += rd::pad(rd::num(s.mean) + " " + rd::interval(s.q025, s.q975), 26);
        }
        t += "\n";
      }
      t += "\n";

      if (spec.m > 1) {
        t += "Factor correlations\n";
        for (int k = 1; k <= spec.m; ++k)
          for (int j = k + 1; j <= spec.m; ++j) {
            const auto& s = rd::find_summary(summary, "phi[" + std::to_string(j) +
                                                          "," + std::to_string(k) + "]");
            t += "  phi[" + std::to_string(j) + "," + std::to_string(k) + "] = " +
                 rd::num(s.mean) + " " + rd::interval(s.q025, s.q975) + "\n";
          }
        t += "\n";
      }

      t += "Uniquenesses (posterior mean, 95% interval)\n";
      for (int j = 1; j <= spec.p; ++j) {
        const auto& s = rd::find_summary(summary, "psi[" + std::to_string(j) + "]");
        t += "  " + rd::pad(cols[j - 1].name, name_width + 2) + rd::num(s.mean) +
             " " + rd::interval(s.q025, s.q975) + "\n";
      }
      t += "\n";
    }

    if (bundle.comparison) t += comparison_section(*bundle.comparison) + "\n";

    if (repro)
      t += "Largest absolute covariance residual: " +
           rd::num(repro->max_abs_residual) + "\n";
    rd::write_file(dir / "summary.txt", t);
  }

  {  // provenance.txt: everything needed to reproduce the run, and nothing
     // that varies between identical runs
    std::string t;
    t += "generator: bayesfa " + std::string(kVersion) + "\n";
    t += "seed: " + std::to_string(bundle.seed) + "\n";
    char digest[32];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(
                      rd::data_digest(bundle.dataset.values)));
    t += "data: " + std::to_string(bundle.dataset.n()) + " rows, " +
         std::to_string(bundle.dataset.p()) + " columns, fnv1a " + digest + "\n";
    t += "columns:";
    for (const auto& c : cols)
      t += " " + c.name + (c.log_transformed ? "(log)" : "");
    t += "\n";
    if (bundle.fit) {
      const UcfmSpec& spec = bundle.fit->spec;
      t += "pattern: p=" + std::to_string(spec.p) + " m=" + std::to_string(spec.m) +
           " zero=" + rd::cell_list(spec.zero_cells) +
           " positive=" + rd::cell_list(spec.positive_cells) + "\n";
      t += "chain: iterations=" + std::to_string(bundle.fit->settings.iterations) +
           " burn_in=" + std::to_string(bundle.fit->settings.burn_in) +
           " chains=" + std::to_string(bundle.fit->settings.chains) + "\n";
    }
    rd::write_file(dir / "provenance.txt", t);
  }
}

}  // namespace bayesfa
