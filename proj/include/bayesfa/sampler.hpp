// Gibbs sampler for the oblique factor model. Scores, intercepts, loading
// rows and uniquenesses move by exact full conditionals; the factor
// correlation matrix moves by a parameter-expanded Metropolis step whose
// stationary law is the induced correlation prior times the score likelihood.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "bayesfa/model.hpp"
#include "bayesfa/preprocess.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

// Blocks held at their initial values; reduced runs fix trailing blocks.
struct FixedBlocks {
  bool mu = false;
  bool lambda = false;
  bool psi = false;
  bool phi = false;
};

// Called on every retained sweep with the end-of-sweep state. Requires a
// single chain so the call order is the iteration order.
using GibbsObserver =
    std::function<void(const FactorParams&, const Eigen::MatrixXd& scores)>;

// 0-based free columns of 1-based loading row j.
inline std::vector<int> free_columns(const UcfmSpec& spec, int row) {
  std::vector<int> cols;
  for (int k = 1; k <= spec.m; ++k)
    if (!spec.is_zero(row, k)) cols.push_back(k - 1);
  return cols;
}

// Sum over rows of log N(x_i; 0, cov).
inline double mvn_zero_loglik(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(cov.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("mvn_zero_loglik: covariance not positive definite");
  double logdet = 0.0;
  for (int j = 0; j < m; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
  const double quad = llt.matrixL().solve(x.transpose()).squaredNorm();
  return -0.5 * (n * m * std::log(2.0 * M_PI) + n * logdet + quad);
}

namespace gibbs_detail {

inline double crosscov_loglik(const Eigen::MatrixXd& xtx, int n,
                              const Eigen::MatrixXd& cov) {
  const int m = static_cast<int>(cov.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("crosscov_loglik: covariance not positive definite");
  double logdet = 0.0;
  for (int j = 0; j < m; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
  const double quad = llt.solve(xtx).trace();
  return -0.5 * (n * m * std::log(2.0 * M_PI) + n * logdet + quad);
}

inline Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& w) {
  const Eigen::VectorXd s = w.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd c = s.asDiagonal() * w * s.asDiagonal();
  c = 0.5 * (c + c.transpose()).eval();
  c.diagonal().setOnes();
  return c;
}

}  // namespace gibbs_detail

// One Metropolis move of the correlation matrix given scores. The chain is
// expanded with per-factor scales d so the working matrix W = D^.5 Phi D^.5
// carries an InverseWishart(df, I) law exactly matching the induced
// correlation prior after rescaling; the proposal is the conjugate update W
// would enjoy if the likelihood saw W instead of corr(W). Returns acceptance.
inline bool phi_px_step(Rng& rng, const Eigen::MatrixXd& xi, Eigen::MatrixXd& phi,
                        int df) {
  const int m = static_cast<int>(phi.rows());
  if (m < 2) return true;
  const int n = static_cast<int>(xi.rows());
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);

  Eigen::LLT<Eigen::MatrixXd> llt(phi);
  if (llt.info() != Eigen::Success)
    throw NumericalError("phi_px_step: current correlation not positive definite");
  const Eigen::MatrixXd phi_inv = llt.solve(eye);

  Eigen::VectorXd d(m);
  for (int j = 0; j < m; ++j)
    d[j] = rng.inv_gamma(0.5 * df, 0.5 * phi_inv(j, j));
  const Eigen::VectorXd sq = d.cwiseSqrt();
  const Eigen::MatrixXd w = sq.asDiagonal() * phi * sq.asDiagonal();

  const Eigen::MatrixXd xtx = xi.transpose() * xi;
  const Eigen::MatrixXd s_fwd =
      eye + sq.asDiagonal() * xtx * sq.asDiagonal();
  const Eigen::MatrixXd w_new = rng.inv_wishart(df + n, s_fwd);
  const Eigen::VectorXd sq_new = w_new.diagonal().cwiseSqrt();
  const Eigen::MatrixXd s_rev =
      eye + sq_new.asDiagonal() * xtx * sq_new.asDiagonal();
  const Eigen::MatrixXd phi_new = gibbs_detail::to_correlation(w_new);

  double num, den;
  try {
    num = inv_wishart_logpdf(w_new, df, eye) +
          gibbs_detail::crosscov_loglik(xtx, n, phi_new) +
          inv_wishart_logpdf(w, df + n, s_rev);
    den = inv_wishart_logpdf(w, df, eye) +
          gibbs_detail::crosscov_loglik(xtx, n, phi) +
          inv_wishart_logpdf(w_new, df + n, s_fwd);
  } catch (const NumericalError&) {
    return false;
  }
  if (std::log(rng.uniform()) < num - den) {
    phi = phi_new;
    return true;
  }
  return false;
}

// Posterior precision and mean of the free cells of one loading row given
// scores restricted to those cells, the centered data column, the row's
// uniqueness and the prior variance.
inline void lambda_row_moments(const Eigen::MatrixXd& xi_free,
                               const Eigen::VectorXd& y, double psi_j, double v,
                               Eigen::MatrixXd* precision, Eigen::VectorXd* mean) {
  const int q = static_cast<int>(xi_free.cols());
  *precision = xi_free.transpose() * xi_free / psi_j +
               Eigen::MatrixXd::Identity(q, q) / v;
  const Eigen::VectorXd rhs = xi_free.transpose() * y / psi_j;
  *mean = precision->llt().solve(rhs);
}

namespace gibbs_detail {

inline void draw_scores(Rng& rng, const Eigen::MatrixXd& data,
                        const FactorParams& params, Eigen::MatrixXd* xi) {
  const int n = static_cast<int>(data.rows());
  const int m = static_cast<int>(params.phi.rows());
  const Eigen::VectorXd psi_inv = params.psi.cwiseInverse();
  const Eigen::MatrixXd phi_inv =
      params.phi.llt().solve(Eigen::MatrixXd::Identity(m, m));
  Eigen::MatrixXd prec =
      phi_inv + params.lambda.transpose() * psi_inv.asDiagonal() * params.lambda;
  prec = 0.5 * (prec + prec.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw NumericalError("draw_scores: score precision not positive definite");

  const Eigen::MatrixXd centered = data.rowwise() - params.mu.transpose();
  const Eigen::MatrixXd b =
      centered * psi_inv.asDiagonal() * params.lambda;  // n x m, rows b_i
  Eigen::MatrixXd mean = llt.solve(b.transpose()).transpose();

  Eigen::MatrixXd noise(n, m);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < m; ++k) noise(i, k) = rng.normal();
  // Row covariance (L L')^{-1}: rows are e' L^{-1}.
  const Eigen::MatrixXd l_inv =
      llt.matrixL().solve(Eigen::MatrixXd::Identity(m, m));
  *xi = mean + noise * l_inv;
}

inline void draw_mu(Rng& rng, const Eigen::MatrixXd& data,
                    const Eigen::MatrixXd& xi, FactorParams* params, double v) {
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  const Eigen::MatrixXd fitted = xi * params->lambda.transpose();
  for (int j = 0; j < p; ++j) {
    const double resid_sum = (data.col(j) - fitted.col(j)).sum();
    const double prec = n / params->psi[j] + 1.0 / v;
    const double mean = resid_sum / params->psi[j] / prec;
    params->mu[j] = mean + rng.normal() / std::sqrt(prec);
  }
}

inline void draw_lambda(Rng& rng, const Eigen::MatrixXd& data,
                        const Eigen::MatrixXd& xi, const UcfmSpec& spec,
                        FactorParams* params, double v) {
  for (int j = 1; j <= spec.p; ++j) {
    const auto cols = free_columns(spec, j);
    if (cols.empty()) continue;
    const int q = static_cast<int>(cols.size());
    Eigen::MatrixXd xi_free(xi.rows(), q);
    for (int c = 0; c < q; ++c) xi_free.col(c) = xi.col(cols[c]);
    const Eigen::VectorXd y = data.col(j - 1).array() - params->mu[j - 1];

    Eigen::MatrixXd prec;
    Eigen::VectorXd mean;
    lambda_row_moments(xi_free, y, params->psi[j - 1], v, &prec, &mean);

    bool truncated = false;
    for (int c = 0; c < q; ++c)
      if (spec.is_positive(j, cols[c] + 1)) truncated = true;

    if (truncated) {
      // Validation pins positive cells to single-free-cell anchor rows.
      if (q != 1)
        throw NumericalError("draw_lambda: positive cell in a row with " +
                             std::to_string(q) + " free cells");
      const double sd = 1.0 / std::sqrt(prec(0, 0));
      params->lambda(j - 1, cols[0]) = rng.trunc_normal_positive(mean[0], sd);
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt(prec);
      if (llt.info() != Eigen::Success)
        throw NumericalError("draw_lambda: row precision not positive definite");
      const Eigen::VectorXd e = rng.normal_vector(q);
      const Eigen::VectorXd draw =
          mean + llt.matrixL().transpose().solve(e);
      for (int c = 0; c < q; ++c) params->lambda(j - 1, cols[c]) = draw[c];
    }
  }
}

inline void draw_psi(Rng& rng, const Eigen::MatrixXd& data,
                     const Eigen::MatrixXd& xi, FactorParams* params,
                     const PriorSpec& prior) {
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  const Eigen::MatrixXd fitted = xi * params->lambda.transpose();
  for (int j = 0; j < p; ++j) {
    const double sse =
        (data.col(j).array() - params->mu[j] - fitted.col(j).array())
            .square()
            .sum();
    params->psi[j] =
        rng.inv_gamma(prior.psi_shape + 0.5 * n, prior.psi_rate + 0.5 * sse);
  }
}

struct ChainResult {
  Eigen::MatrixXd samples;
  std::vector<Eigen::MatrixXd> scores;
  long phi_accepts = 0;
  long phi_attempts = 0;
};

inline ChainResult run_chain(const Eigen::MatrixXd& data, const UcfmSpec& spec,
                             const PriorSpec& prior, const ChainSettings& settings,
                             Rng rng, FactorParams params,
                             const FixedBlocks& fixed,
                             const GibbsObserver& observer) {
  const int total = settings.burn_in + settings.iterations;
  const double v = prior.loading_variance;
  const int df = prior.effective_phi_df(spec.m);

  ChainResult out;
  out.samples.resize(settings.iterations, packed_size(spec));
  if (settings.store_scores) out.scores.reserve(settings.iterations);

  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(data.rows(), spec.m);
  for (int sweep = 0; sweep < total; ++sweep) {
    draw_scores(rng, data, params, &xi);
    if (!fixed.mu) draw_mu(rng, data, xi, &params, v);
    if (!fixed.lambda) draw_lambda(rng, data, xi, spec, &params, v);
    if (!fixed.psi) draw_psi(rng, data, xi, &params, prior);
    if (!fixed.phi && spec.m > 1) {
      out.phi_accepts += phi_px_step(rng, xi, params.phi, df) ? 1 : 0;
      ++out.phi_attempts;
    }
    const int kept = sweep - settings.burn_in;
    if (kept >= 0) {
      out.samples.row(kept) = pack_params(params, spec).transpose();
      if (settings.store_scores) out.scores.push_back(xi);
      if (observer) observer(params, xi);
    }
  }
  return out;
}

}  // namespace gibbs_detail

// Principal-axis start with per-chain jitter. Starting from loadings that
// already explain the leading covariance directions keeps early sweeps out
// of the near-singular correlation ridge, where opposite-sign loading pairs
// compensate a factor correlation near -1 and the chain mixes very slowly.
inline FactorParams default_init(const Eigen::MatrixXd& data, const UcfmSpec& spec,
                                 Rng& rng) {
  const int n = static_cast<int>(data.rows());
  FactorParams init;
  init.mu = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - init.mu.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / (n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);

  init.lambda = Eigen::MatrixXd::Zero(spec.p, spec.m);
  for (int k = 0; k < spec.m; ++k) {
    const int which = spec.p - 1 - k;  // eigenvalues ascend
    const double ev = std::max(es.eigenvalues()[which], 0.0);
    const Eigen::VectorXd col = es.eigenvectors().col(which) * std::sqrt(ev);
    for (int j = 1; j <= spec.p; ++j)
      if (!spec.is_zero(j, k + 1)) init.lambda(j - 1, k) = col[j - 1];
  }
  for (const auto& cell : spec.positive_cells)
    if (init.lambda(cell.row - 1, cell.col - 1) < 0.0)
      init.lambda.col(cell.col - 1) *= -1.0;
  for (int j = 1; j <= spec.p; ++j)
    for (int k = 1; k <= spec.m; ++k) {
      if (spec.is_zero(j, k)) continue;
      init.lambda(j - 1, k - 1) += 0.05 * rng.normal();
      if (spec.is_positive(j, k))
        init.lambda(j - 1, k - 1) =
            std::max(0.1, std::fabs(init.lambda(j - 1, k - 1)));
    }

  init.psi.resize(spec.p);
  for (int j = 0; j < spec.p; ++j) {
    const double comm = init.lambda.row(j).squaredNorm();
    init.psi[j] = std::max(0.05, cov(j, j) - comm);
  }
  init.phi = Eigen::MatrixXd::Identity(spec.m, spec.m);
  return init;
}

inline PosteriorDraws gibbs_run(const Eigen::MatrixXd& data, const UcfmSpec& spec,
                                const PriorSpec& prior,
                                const ChainSettings& settings, std::uint64_t seed,
                                const std::optional<FactorParams>& init = {},
                                const FixedBlocks& fixed = {},
                                const GibbsObserver& observer = {}) {
  const auto findings = validate_spec(spec);
  if (!findings.empty()) throw ConfigError("gibbs_run: " + findings.front());
  if (static_cast<int>(data.cols()) != spec.p)
    throw DataError("gibbs_run: data has " + std::to_string(data.cols()) +
                    " columns, pattern expects " + std::to_string(spec.p));
  if (data.rows() < 2) throw DataError("gibbs_run: need at least 2 rows");
  if (settings.iterations < 1 || settings.burn_in < 0 || settings.chains < 1)
    throw ConfigError("gibbs_run: iterations, burn_in, chains out of range");
  if (observer && settings.chains != 1)
    throw ConfigError("gibbs_run: an observer requires a single chain");
  if (init) {
    const auto param_findings = validate_params(*init, spec);
    if (!param_findings.empty())
      throw ConfigError("gibbs_run: init: " + param_findings.front());
  }

  const Rng root(seed);
  std::vector<std::future<gibbs_detail::ChainResult>> futures;
  std::vector<gibbs_detail::ChainResult> results(settings.chains);
  for (int c = 0; c < settings.chains; ++c) {
    Rng chain_rng = root.child("chain", c);
    FactorParams start = init ? *init : default_init(data, spec, chain_rng);
    if (settings.chains == 1) {
      results[c] = gibbs_detail::run_chain(data, spec, prior, settings, chain_rng,
                                           start, fixed, observer);
    } else {
      futures.push_back(std::async(std::launch::async, [&, chain_rng, start] {
        return gibbs_detail::run_chain(data, spec, prior, settings, chain_rng,
                                       start, fixed, observer);
      }));
    }
  }
  for (std::size_t i = 0; i < futures.size(); ++i) results[i] = futures[i].get();

  PosteriorDraws draws;
  draws.spec = spec;
  draws.seed = seed;
  draws.settings = settings;
  draws.samples.resize(settings.chains * settings.iterations, packed_size(spec));
  long accepts = 0, attempts = 0;
  for (int c = 0; c < settings.chains; ++c) {
    draws.samples.middleRows(c * settings.iterations, settings.iterations) =
        results[c].samples;
    accepts += results[c].phi_accepts;
    attempts += results[c].phi_attempts;
    for (auto& s : results[c].scores) draws.scores.push_back(std::move(s));
  }
  draws.phi_accept_rate =
      attempts > 0 ? static_cast<double>(accepts) / attempts : 1.0;
  return draws;
}

// Independent draws from the prior, in the packed layout.
inline PriorDraws sample_prior(const UcfmSpec& spec, const PriorSpec& prior,
                               int count, std::uint64_t seed) {
  const auto findings = validate_spec(spec);
  if (!findings.empty()) throw ConfigError("sample_prior: " + findings.front());
  if (count < 1) throw ConfigError("sample_prior: count must be positive");

  Rng rng = Rng(seed).child("prior");
  const double sd = std::sqrt(prior.loading_variance);
  const int df = prior.effective_phi_df(spec.m);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(spec.m, spec.m);

  PriorDraws draws;
  draws.spec = spec;
  draws.seed = seed;
  draws.samples.resize(count, packed_size(spec));
  FactorParams params;
  params.mu.resize(spec.p);
  params.lambda.resize(spec.p, spec.m);
  params.psi.resize(spec.p);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < spec.p; ++j) params.mu[j] = sd * rng.normal();
    for (int j = 1; j <= spec.p; ++j)
      for (int k = 1; k <= spec.m; ++k) {
        double x = 0.0;
        if (!spec.is_zero(j, k)) {
          x = sd * rng.normal();
          if (spec.is_positive(j, k)) x = std::fabs(x);
        }
        params.lambda(j - 1, k - 1) = x;
      }
    for (int j = 0; j < spec.p; ++j)
      params.psi[j] = rng.inv_gamma(prior.psi_shape, prior.psi_rate);
    params.phi = spec.m > 1 ? gibbs_detail::to_correlation(rng.inv_wishart(df, eye))
                            : eye;
    draws.samples.row(i) = pack_params(params, spec).transpose();
  }
  return draws;
}

// Tab-separated draw dump: header row of packed names, one row per draw,
// shortest round-trip number formatting.
inline void write_draws(const std::string& path, const Eigen::MatrixXd& samples,
                        const UcfmSpec& spec) {
  const auto names = packed_names(spec);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (j) out << '\t';
    out << names[j];
  }
  out << '\n';
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if (j) out << '\t';
      out << detail::format_double(samples(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

inline Eigen::MatrixXd read_draws(const std::string& path, const UcfmSpec& spec) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty draw file: " + path);
  const auto names = packed_names(spec);
  {
    std::vector<std::string> header;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      header.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (!header.empty() && !header.back().empty() && header.back().back() == '\r')
      header.back().pop_back();
    if (header != names)
      throw DataError("draw file columns do not match the pattern: " + path);
  }
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = 0, col = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      const std::string field = line.substr(start, tab - start);
      double x = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw DataError("draw file row " + std::to_string(rows + 2) +
                        ": not a number: '" + field + "'");
      values.push_back(x);
      ++col;
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (col != names.size())
      throw DataError("draw file row " + std::to_string(rows + 2) + " has " +
                      std::to_string(col) + " fields, expected " +
                      std::to_string(names.size()));
    ++rows;
  }
  Eigen::MatrixXd samples(rows, names.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      samples(i, j) = values[i * names.size() + j];
  return samples;
}

}  // namespace bayesfa
