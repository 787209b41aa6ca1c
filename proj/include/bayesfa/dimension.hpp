// Dimensionality selection: the marginal likelihood of each candidate factor
// count is estimated from the posterior ordinate identity at a high-density
// point, with a training subsample standing in for the prior so diffuse
// settings stay comparable across candidates. A singular-value screen flags
// candidates whose extra factors carry no data support.
#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bayesfa/detail/optim.hpp"
#include "bayesfa/model.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/sampler.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

// Fails when the 5th percentile of the smallest singular value of the
// loadings in the orthogonalized factor metric (Lambda times the Cholesky
// factor of Phi, whose Gram matrix is the common part of the covariance)
// falls below a fifth of the median largest. A dead loading column and a
// duplicated factor pair hiding behind a near-singular Phi both shrink the
// smallest value; with Phi = I this is the plain loading singular value.
// The cutoff sits inside the gap between directions with data support
// (relative size around 0.6 or more in practice) and spurious ones, whose
// posterior never shrinks below sampling noise, around 0.1 at n = 500.
struct RankScreen {
  bool pass = true;
  double smallest_q05 = 0.0;
  double largest_q50 = 0.0;
};

inline RankScreen rank_screen(const Eigen::MatrixXd& samples, const UcfmSpec& spec) {
  const int g = static_cast<int>(samples.rows());
  std::vector<double> smallest(g), largest(g);
  for (int i = 0; i < g; ++i) {
    const auto params = unpack_params(samples.row(i).transpose(), spec);
    const Eigen::MatrixXd scaled =
        params.lambda * Eigen::LLT<Eigen::MatrixXd>(params.phi).matrixL();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(scaled);
    smallest[i] = svd.singularValues().minCoeff();
    largest[i] = svd.singularValues().maxCoeff();
  }
  RankScreen screen;
  screen.smallest_q05 = detail::quantile(smallest, 0.05);
  screen.largest_q50 = detail::quantile(largest, 0.50);
  screen.pass = screen.smallest_q05 >= 0.2 * screen.largest_q50;
  return screen;
}

// Row indices (sorted) of `count` random training subsamples of size
// `train_size`, shared by every candidate so their marginals condition on
// identical data.
inline std::vector<std::vector<int>> training_splits(int n, int count,
                                                     int train_size,
                                                     std::uint64_t seed) {
  if (count < 1) throw ConfigError("training_splits: count must be positive");
  if (train_size < 1 || train_size >= n)
    throw ConfigError("training_splits: train_size " + std::to_string(train_size) +
                      " out of range for n = " + std::to_string(n));
  const Rng root(seed);
  std::vector<std::vector<int>> splits;
  for (int s = 0; s < count; ++s) {
    Rng rng = root.child("split", s);
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    for (int i = 0; i < train_size; ++i) {
      const int j = i + static_cast<int>(rng.uniform() * (n - i));
      std::swap(rows[i], rows[std::min(j, n - 1)]);
    }
    rows.resize(train_size);
    std::sort(rows.begin(), rows.end());
    splits.push_back(std::move(rows));
  }
  return splits;
}

inline Eigen::MatrixXd rows_subset(const Eigen::MatrixXd& data,
                                   const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = data.row(rows[i]);
  return out;
}

inline Eigen::MatrixXd rows_complement(const Eigen::MatrixXd& data,
                                       const std::vector<int>& rows) {
  std::vector<bool> in_train(data.rows(), false);
  for (int r : rows) in_train[r] = true;
  Eigen::MatrixXd out(data.rows() - rows.size(), data.cols());
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    if (!in_train[i]) out.row(at++) = data.row(i);
  return out;
}

// Pairwise varimax rotation; used only to pick anchor rows, so orthogonality
// of the rotated block is immaterial.
inline Eigen::MatrixXd varimax(Eigen::MatrixXd lambda, int max_sweeps = 64,
                               double tol = 1e-10) {
  const int p = static_cast<int>(lambda.rows());
  const int m = static_cast<int>(lambda.cols());
  if (m < 2) return lambda;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double rotated = 0.0;
    for (int k = 0; k < m; ++k)
      for (int l = k + 1; l < m; ++l) {
        double a = 0, b = 0, c = 0, d = 0;
        for (int j = 0; j < p; ++j) {
          const double u = lambda(j, k) * lambda(j, k) - lambda(j, l) * lambda(j, l);
          const double v = 2.0 * lambda(j, k) * lambda(j, l);
          a += u;
          b += v;
          c += u * u - v * v;
          d += 2.0 * u * v;
        }
        const double num = d - 2.0 * a * b / p;
        const double den = c - (a * a - b * b) / p;
        const double angle = 0.25 * std::atan2(num, den);
        if (std::fabs(angle) < tol) continue;
        rotated += std::fabs(angle);
        const double cs = std::cos(angle), sn = std::sin(angle);
        for (int j = 0; j < p; ++j) {
          const double x = lambda(j, k), y = lambda(j, l);
          lambda(j, k) = cs * x + sn * y;
          lambda(j, l) = -sn * x + cs * y;
        }
      }
    if (rotated < tol) break;
  }
  return lambda;
}

// Anchor pattern chosen from the data: principal-axis loadings are varimax
// rotated, then each factor takes its purest row (largest own loading net of
// the row's best other loading) as the anchor. The anchor cell is truncated
// positive, the rest of its row pinned to zero.
inline UcfmSpec canonical_ucfm_spec(const Eigen::MatrixXd& data, int m) {
  const int p = static_cast<int>(data.cols());
  const int n = static_cast<int>(data.rows());
  if (m < 1 || m > p) throw ConfigError("canonical_ucfm_spec: bad factor count");
  if (n < 3) throw DataError("canonical_ucfm_spec: need at least 3 rows");

  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / (n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd loadings(p, m);
  for (int k = 0; k < m; ++k) {
    const int which = p - 1 - k;
    const double ev = std::max(es.eigenvalues()[which], 0.0);
    loadings.col(k) = es.eigenvectors().col(which) * std::sqrt(ev);
  }
  loadings = varimax(loadings);

  UcfmSpec spec;
  spec.p = p;
  spec.m = m;
  std::vector<bool> taken(p, false);
  for (int k = 0; k < m; ++k) {
    int anchor = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < p; ++j) {
      if (taken[j]) continue;
      double other = 0.0;
      for (int l = 0; l < m; ++l)
        if (l != k) other = std::max(other, std::fabs(loadings(j, l)));
      const double purity = std::fabs(loadings(j, k)) - other;
      if (purity > best) {
        best = purity;
        anchor = j;
      }
    }
    taken[anchor] = true;
    spec.positive_cells.push_back({anchor + 1, k + 1});
    for (int l = 0; l < m; ++l)
      if (l != k) spec.zero_cells.push_back({anchor + 1, l + 1});
  }
  return spec;
}

// log N(X; mu, sigma) summed over rows, with the centered scatter matrix
// precomputed: evaluating many sigmas against one dataset costs O(p^3) each.
inline double scatter_loglik(const Eigen::MatrixXd& scatter, int n,
                             const Eigen::MatrixXd& sigma) {
  const int p = static_cast<int>(sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (int j = 0; j < p; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
  const double quad = llt.solve(scatter).trace();
  return -0.5 * (n * p * std::log(2.0 * M_PI) + n * logdet + quad);
}

// Off-diagonals in the packed (column-major lower triangle) order.
inline Eigen::VectorXd offdiag_of(const Eigen::MatrixXd& phi) {
  const int m = static_cast<int>(phi.rows());
  Eigen::VectorXd omega(m * (m - 1) / 2);
  int at = 0;
  for (int k = 0; k < m; ++k)
    for (int j = k + 1; j < m; ++j) omega[at++] = phi(j, k);
  return omega;
}

inline Eigen::MatrixXd corr_from_offdiag(const Eigen::VectorXd& omega, int m) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(m, m);
  int at = 0;
  for (int k = 0; k < m; ++k)
    for (int j = k + 1; j < m; ++j) {
      phi(j, k) = omega[at];
      phi(k, j) = omega[at];
      ++at;
    }
  return phi;
}

namespace chib_detail {

// Unnormalized log conditional of the correlation matrix given the rest of
// the parameters, with the factors integrated out; -inf off the manifold.
struct PhiConditional {
  const Eigen::MatrixXd* scatter;
  int n;
  const Eigen::MatrixXd* lambda;
  const Eigen::VectorXd* psi;
  int df;

  double operator()(const Eigen::VectorXd& omega) const {
    const int m = static_cast<int>(lambda->cols());
    for (int i = 0; i < omega.size(); ++i)
      if (!(std::fabs(omega[i]) < 1.0))
        return -std::numeric_limits<double>::infinity();
    const Eigen::MatrixXd phi = corr_from_offdiag(omega, m);
    const double prior = correlation_prior_logpdf_unnorm(phi, df);
    if (!std::isfinite(prior)) return prior;
    const Eigen::MatrixXd sigma = implied_covariance(*lambda, phi, *psi);
    return scatter_loglik(*scatter, n, sigma) + prior;
  }
};

inline double phi_log_normalizer_quadrature(const PhiConditional& target,
                                            int points = 4001) {
  std::vector<double> lp(points);
  const double width = 2.0 / points;
  Eigen::VectorXd omega(1);
  for (int g = 0; g < points; ++g) {
    omega[0] = -1.0 + width * (g + 0.5);
    lp[g] = target(omega);
  }
  return detail::logsumexp(lp) + std::log(width);
}

inline double phi_log_normalizer_is(const PhiConditional& target,
                                    const Eigen::VectorXd& start, long draws,
                                    std::uint64_t seed, double* ess_out) {
  const int d = static_cast<int>(start.size());
  const auto negated = [&](const Eigen::VectorXd& x) { return -target(x); };
  const auto mode = detail::nelder_mead(negated, start, 0.02, 20000, 1e-11);

  // Central-difference Hessian of the log target at the mode.
  const double h = 1e-3;
  Eigen::MatrixXd hess(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      Eigen::VectorXd x = mode.x;
      auto at = [&](double di, double dj) {
        x = mode.x;
        x[i] += di;
        x[j] += dj;
        return target(x);
      };
      double second;
      if (i == j) {
        second = (at(h, 0) - 2.0 * target(mode.x) + at(-h, 0)) / (h * h);
      } else {
        second = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
      }
      hess(i, j) = second;
      hess(j, i) = second;
    }

  // Proposal: normal at the mode with inflated Laplace covariance. When the
  // mode sits against the |omega| < 1 boundary the finite differences can
  // lose definiteness or blow up; eigenvalues are clamped in magnitude so a
  // proposal always exists, and the importance weights absorb the mismatch.
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (!std::isfinite(hess(i, j))) hess(i, j) = 0.0;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-hess);
  Eigen::VectorXd curv = eig.eigenvalues().cwiseAbs();
  curv = curv.cwiseMax(1e-6 * std::max(curv.maxCoeff(), 1.0));
  const Eigen::MatrixXd prop_chol =
      eig.eigenvectors() * curv.cwiseSqrt().cwiseInverse().asDiagonal();
  const double scale = 1.5;
  double logdet_prop = d * std::log(scale);
  for (int j = 0; j < d; ++j) logdet_prop -= 0.5 * std::log(curv[j]);

  Rng rng = Rng(seed).child("phi-ordinate");
  std::vector<double> logw(draws);
  for (long s = 0; s < draws; ++s) {
    const Eigen::VectorXd z = rng.normal_vector(d);
    const Eigen::VectorXd x = mode.x + scale * (prop_chol * z);
    const double logq =
        -0.5 * (d * std::log(2.0 * M_PI) + z.squaredNorm()) - logdet_prop;
    logw[s] = target(x) - logq;
  }
  const double lse = detail::logsumexp(logw);
  if (ess_out) {
    std::vector<double> log2w(logw.size());
    for (std::size_t i = 0; i < logw.size(); ++i) log2w[i] = 2.0 * logw[i];
    *ess_out = std::exp(2.0 * lse - detail::logsumexp(log2w));
  }
  return lse - std::log(static_cast<double>(draws));
}

}  // namespace chib_detail

struct OrdinateParts {
  double psi = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double phi = 0.0;
  double phi_is_ess = 0.0;  // importance-sampling ESS; 0 when quadrature ran
  double total() const { return psi + lambda + mu + phi; }
};

// log posterior density at theta_star, decomposed block by block: the psi
// ordinate averages its full conditional over the posterior, the lambda and
// mu ordinates over runs with the conditioned blocks held fixed, and the
// correlation ordinate is its exact normalized conditional (quadrature for
// two factors, mode-centered importance sampling above).
inline OrdinateParts log_posterior_ordinate(const Eigen::MatrixXd& data,
                                            const UcfmSpec& spec,
                                            const PriorSpec& prior,
                                            const ChainSettings& chain,
                                            long phi_is_draws, std::uint64_t seed,
                                            const FactorParams& theta_star) {
  const int n = static_cast<int>(data.rows());
  const double v = prior.loading_variance;
  ChainSettings settings = chain;
  settings.chains = 1;
  settings.store_scores = false;
  const Rng root(seed);

  OrdinateParts parts;
  const double log_g = std::log(static_cast<double>(settings.iterations));

  {  // psi ordinate from the unconstrained run
    std::vector<double> terms;
    terms.reserve(settings.iterations);
    const GibbsObserver observer = [&](const FactorParams& params,
                                       const Eigen::MatrixXd& xi) {
      const Eigen::MatrixXd fitted = xi * params.lambda.transpose();
      double term = 0.0;
      for (int j = 0; j < spec.p; ++j) {
        const double sse =
            (data.col(j).array() - params.mu[j] - fitted.col(j).array())
                .square()
                .sum();
        term += inv_gamma_logpdf(theta_star.psi[j], prior.psi_shape + 0.5 * n,
                                 prior.psi_rate + 0.5 * sse);
      }
      terms.push_back(term);
    };
    gibbs_run(data, spec, prior, settings, root.child("psi").derived_seed(),
              theta_star, {}, observer);
    parts.psi = detail::logsumexp(terms) - log_g;
  }

  bool any_free = false;
  for (int j = 1; j <= spec.p; ++j)
    if (!free_columns(spec, j).empty()) any_free = true;

  if (any_free) {  // lambda ordinate with psi held at its ordinate value
    std::vector<double> terms;
    terms.reserve(settings.iterations);
    FixedBlocks fixed;
    fixed.psi = true;
    const GibbsObserver observer = [&](const FactorParams& params,
                                       const Eigen::MatrixXd& xi) {
      double term = 0.0;
      for (int j = 1; j <= spec.p; ++j) {
        const auto cols = free_columns(spec, j);
        if (cols.empty()) continue;
        const int q = static_cast<int>(cols.size());
        Eigen::MatrixXd xi_free(xi.rows(), q);
        for (int c = 0; c < q; ++c) xi_free.col(c) = xi.col(cols[c]);
        const Eigen::VectorXd y = data.col(j - 1).array() - params.mu[j - 1];
        Eigen::MatrixXd prec;
        Eigen::VectorXd mean;
        lambda_row_moments(xi_free, y, theta_star.psi[j - 1], v, &prec, &mean);

        bool truncated = false;
        for (int c = 0; c < q; ++c)
          if (spec.is_positive(j, cols[c] + 1)) truncated = true;
        if (truncated) {
          const double sd = 1.0 / std::sqrt(prec(0, 0));
          const double x = theta_star.lambda(j - 1, cols[0]);
          term += detail::norm_logpdf((x - mean[0]) / sd) - std::log(sd) -
                  detail::log_norm_cdf(mean[0] / sd);
        } else {
          Eigen::VectorXd delta(q);
          for (int c = 0; c < q; ++c)
            delta[c] = theta_star.lambda(j - 1, cols[c]) - mean[c];
          const Eigen::LLT<Eigen::MatrixXd> llt(prec);
          double logdet = 0.0;
          for (int c = 0; c < q; ++c) logdet += 2.0 * std::log(llt.matrixL()(c, c));
          term += 0.5 * logdet - 0.5 * q * std::log(2.0 * M_PI) -
                  0.5 * delta.dot(prec * delta);
        }
      }
      terms.push_back(term);
    };
    gibbs_run(data, spec, prior, settings, root.child("lambda").derived_seed(),
              theta_star, fixed, observer);
    parts.lambda = detail::logsumexp(terms) - log_g;
  }

  {  // mu ordinate with psi and lambda held
    std::vector<double> terms;
    terms.reserve(settings.iterations);
    FixedBlocks fixed;
    fixed.psi = true;
    fixed.lambda = true;
    const GibbsObserver observer = [&](const FactorParams&,
                                       const Eigen::MatrixXd& xi) {
      const Eigen::MatrixXd fitted = xi * theta_star.lambda.transpose();
      double term = 0.0;
      for (int j = 0; j < spec.p; ++j) {
        const double prec = n / theta_star.psi[j] + 1.0 / v;
        const double mean =
            (data.col(j) - fitted.col(j)).sum() / theta_star.psi[j] / prec;
        const double sd = 1.0 / std::sqrt(prec);
        term += detail::norm_logpdf((theta_star.mu[j] - mean) / sd) - std::log(sd);
      }
      terms.push_back(term);
    };
    gibbs_run(data, spec, prior, settings, root.child("mu").derived_seed(),
              theta_star, fixed, observer);
    parts.mu = detail::logsumexp(terms) - log_g;
  }

  if (spec.m > 1) {  // correlation ordinate, exact given the other blocks
    const Eigen::MatrixXd centered = data.rowwise() - theta_star.mu.transpose();
    const Eigen::MatrixXd scatter = centered.transpose() * centered;
    chib_detail::PhiConditional target{&scatter, n, &theta_star.lambda,
                                       &theta_star.psi,
                                       prior.effective_phi_df(spec.m)};
    const Eigen::VectorXd omega_star = offdiag_of(theta_star.phi);
    double log_z;
    if (spec.m == 2) {
      log_z = chib_detail::phi_log_normalizer_quadrature(target);
    } else {
      log_z = chib_detail::phi_log_normalizer_is(
          target, omega_star, phi_is_draws,
          root.child("phi-is").derived_seed(), &parts.phi_is_ess);
    }
    parts.phi = target(omega_star) - log_z;
  }
  return parts;
}

struct ChibSettings {
  ChainSettings theta_star_run{4000, 1000, 1, false};
  ChainSettings ordinate_run{2000, 500, 1, false};
  int splits = 5;
  long phi_is_draws = 20000;
};

struct ChibEstimate {
  UcfmSpec spec;
  FactorParams theta_star;
  double log_marginal = 0.0;          // averaged over splits
  std::vector<double> split_values;   // per-split log marginal
  OrdinateParts full_parts;           // ordinate at the full-data posterior
  RankScreen rank;
  double phi_accept_rate = 1.0;
};

// Posterior mean with the truncated cells kept strictly inside their support.
inline FactorParams posterior_mean_params(const Eigen::MatrixXd& samples,
                                          const UcfmSpec& spec) {
  const Eigen::VectorXd mean = samples.colwise().mean();
  FactorParams params = unpack_params(mean, spec);
  for (const auto& cell : spec.positive_cells)
    params.lambda(cell.row - 1, cell.col - 1) =
        std::max(params.lambda(cell.row - 1, cell.col - 1), 1e-8);
  return params;
}

// Averaged log marginal of the held-out rows given each training subsample,
// evaluated through the ordinate identity at the full-data posterior mean:
// log f(rest | train) = log f(rest; theta*) + log pi(theta* | train)
//                       - log pi(theta* | full).
inline ChibEstimate chib_log_marginal(const Eigen::MatrixXd& data,
                                      const UcfmSpec& spec, const PriorSpec& prior,
                                      const ChibSettings& settings,
                                      std::uint64_t seed,
                                      const std::vector<std::vector<int>>& splits) {
  if (splits.empty()) throw ConfigError("chib_log_marginal: no training splits");
  const Rng root(seed);

  ChibEstimate est;
  est.spec = spec;
  const auto theta_run = gibbs_run(data, spec, prior, settings.theta_star_run,
                                   root.child("theta-star").derived_seed());
  est.theta_star = posterior_mean_params(theta_run.samples, spec);
  est.rank = rank_screen(theta_run.samples, spec);
  est.phi_accept_rate = theta_run.phi_accept_rate;

  est.full_parts = log_posterior_ordinate(
      data, spec, prior, settings.ordinate_run, settings.phi_is_draws,
      root.child("ordinate-full").derived_seed(), est.theta_star);

  for (std::size_t s = 0; s < splits.size(); ++s) {
    const Eigen::MatrixXd train = rows_subset(data, splits[s]);
    const Eigen::MatrixXd rest = rows_complement(data, splits[s]);
    const auto train_parts = log_posterior_ordinate(
        train, spec, prior, settings.ordinate_run, settings.phi_is_draws,
        root.child("ordinate-train", static_cast<int>(s)).derived_seed(),
        est.theta_star);
    const double value = observed_loglik(rest, est.theta_star) +
                         train_parts.total() - est.full_parts.total();
    est.split_values.push_back(value);
  }
  est.log_marginal =
      std::accumulate(est.split_values.begin(), est.split_values.end(), 0.0) /
      est.split_values.size();
  return est;
}

struct DimensionSettings {
  ChibSettings chib;
  int max_factors = 0;        // 0 means the existence bound for p
  double train_fraction = 0;  // 0 means the prior's training fraction
};

struct DimensionResult {
  std::vector<ChibEstimate> candidates;  // factor counts 1..max
  std::vector<double> pmp;               // normalized across candidates
  int selected_m = 0;
  int train_size = 0;
};

inline DimensionResult select_dimension(const Eigen::MatrixXd& data,
                                        const PriorSpec& prior,
                                        const DimensionSettings& settings,
                                        std::uint64_t seed) {
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  const auto bound = factor_upper_bound(p);
  if (!bound)
    throw ConfigError("select_dimension: no factor count satisfies the "
                      "existence bound for p = " + std::to_string(p));
  int m_max = settings.max_factors > 0 ? settings.max_factors : *bound;
  if (m_max > *bound)
    throw ConfigError("select_dimension: max_factors " +
                      std::to_string(settings.max_factors) +
                      " exceeds the existence bound " + std::to_string(*bound) +
                      " for p = " + std::to_string(p));

  const double fraction =
      settings.train_fraction > 0 ? settings.train_fraction : prior.training_fraction;
  // Training subsamples must carry enough rows to properize every candidate.
  const int largest_free = 2 * p + p * m_max - m_max * (m_max - 1) / 2;
  const int train_size =
      std::max(static_cast<int>(std::ceil(fraction * n)), largest_free + 5);
  if (train_size >= n)
    throw DataError("select_dimension: " + std::to_string(n) +
                    " rows cannot spare a training subsample of " +
                    std::to_string(train_size));

  const Rng root(seed);
  const auto splits = training_splits(n, settings.chib.splits, train_size,
                                      root.child("splits").derived_seed());

  std::vector<std::future<ChibEstimate>> futures;
  for (int m = 1; m <= m_max; ++m) {
    futures.push_back(std::async(std::launch::async, [&, m] {
      const UcfmSpec spec = canonical_ucfm_spec(data, m);
      return chib_log_marginal(data, spec, prior, settings.chib,
                               root.child("candidate", m).derived_seed(), splits);
    }));
  }

  DimensionResult result;
  result.train_size = train_size;
  std::vector<double> logm;
  for (auto& f : futures) {
    result.candidates.push_back(f.get());
    logm.push_back(result.candidates.back().log_marginal);
  }

  // Candidates whose loadings fail the rank screen are not identified, so
  // their ordinate estimates are not trustworthy: they are excluded from the
  // probability comparison (pmp 0) unless nothing at all passes.
  std::vector<std::size_t> in_play;
  for (std::size_t i = 0; i < result.candidates.size(); ++i)
    if (result.candidates[i].rank.pass) in_play.push_back(i);
  if (in_play.empty())
    for (std::size_t i = 0; i < result.candidates.size(); ++i)
      in_play.push_back(i);

  std::vector<double> kept;
  for (std::size_t i : in_play) kept.push_back(logm[i]);
  const double lse = detail::logsumexp(kept);
  result.pmp.assign(result.candidates.size(), 0.0);
  for (std::size_t i : in_play) result.pmp[i] = std::exp(logm[i] - lse);

  std::size_t best = in_play[0];
  for (std::size_t i : in_play)
    if (logm[i] > logm[best]) best = i;
  result.selected_m = static_cast<int>(best) + 1;
  return result;
}

}  // namespace bayesfa
