// Model arithmetic shared by the sampler, the marginal-likelihood machinery
// and the reports: implied covariance, observed-data log likelihood, prior
// density, and the flat parameter packing used by draw storage.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "bayesfa/rng.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

// Sigma = Lambda Phi Lambda' + Psi.
inline Eigen::MatrixXd implied_covariance(const Eigen::MatrixXd& lambda,
                                          const Eigen::MatrixXd& phi,
                                          const Eigen::VectorXd& psi) {
  Eigen::MatrixXd sigma = lambda * phi * lambda.transpose();
  sigma.diagonal() += psi;
  return 0.5 * (sigma + sigma.transpose()).eval();
}

inline Eigen::MatrixXd implied_covariance(const FactorParams& params) {
  return implied_covariance(params.lambda, params.phi, params.psi);
}

// Sum over rows of log N(z_i; mu, Sigma) with the factors integrated out.
inline double observed_loglik(const Eigen::MatrixXd& data,
                              const FactorParams& params) {
  const int n = static_cast<int>(data.rows());
  const int p = static_cast<int>(data.cols());
  const Eigen::MatrixXd sigma = implied_covariance(params);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NumericalError("observed_loglik: implied covariance not positive definite");
  double logdet = 0.0;
  for (int j = 0; j < p; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
  const Eigen::MatrixXd centered = data.rowwise() - params.mu.transpose();
  const Eigen::MatrixXd half = llt.matrixL().solve(centered.transpose());
  const double quad = half.squaredNorm();
  return -0.5 * (n * p * std::log(2.0 * M_PI) + n * logdet + quad);
}

// Density of the correlation matrix induced by rescaling an
// InverseWishart(df, c*I) draw to unit diagonal, up to a constant:
// |Phi|^{-(df+m+1)/2} * prod_j (Phi^{-1})_{jj}^{-df/2}.
inline double correlation_prior_logpdf_unnorm(const Eigen::MatrixXd& phi, int df) {
  const int m = static_cast<int>(phi.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(phi);
  if (llt.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (int j = 0; j < m; ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m, m));
  double s = -0.5 * (df + m + 1) * logdet;
  for (int j = 0; j < m; ++j) s -= 0.5 * df * std::log(inv(j, j));
  return s;
}

// log prior density at one parameter set. Exact for mu, Lambda (truncated
// cells carry their 1/2 normalizer) and Psi; the Phi factor is the induced
// correlation density up to an additive constant depending only on (m, df),
// which cancels in the ratios this function feeds.
inline double log_prior_density(const FactorParams& params, const UcfmSpec& spec,
                                const PriorSpec& prior) {
  const double v = prior.loading_variance;
  const double sd = std::sqrt(v);
  double s = 0.0;
  for (int j = 0; j < spec.p; ++j) s += detail::norm_logpdf(params.mu[j] / sd) - std::log(sd);
  for (int j = 1; j <= spec.p; ++j)
    for (int k = 1; k <= spec.m; ++k) {
      if (spec.is_zero(j, k)) continue;
      const double x = params.lambda(j - 1, k - 1);
      if (spec.is_positive(j, k)) {
        if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
        s += std::log(2.0) + detail::norm_logpdf(x / sd) - std::log(sd);
      } else {
        s += detail::norm_logpdf(x / sd) - std::log(sd);
      }
    }
  for (int j = 0; j < spec.p; ++j)
    s += inv_gamma_logpdf(params.psi[j], prior.psi_shape, prior.psi_rate);
  if (spec.m > 1)
    s += correlation_prior_logpdf_unnorm(params.phi, prior.effective_phi_df(spec.m));
  return s;
}

// Flat layout: mu[1..p], vec(Lambda) column-major, diag(Psi),
// lower-triangle(Phi) column-major. This is the draw-dump column order.
inline int packed_size(const UcfmSpec& spec) {
  return spec.p + spec.p * spec.m + spec.p + spec.m * (spec.m - 1) / 2;
}

inline std::vector<std::string> packed_names(const UcfmSpec& spec) {
  std::vector<std::string> names;
  names.reserve(packed_size(spec));
  for (int j = 1; j <= spec.p; ++j) names.push_back("mu[" + std::to_string(j) + "]");
  for (int k = 1; k <= spec.m; ++k)
    for (int j = 1; j <= spec.p; ++j)
      names.push_back("lambda[" + std::to_string(j) + "," + std::to_string(k) + "]");
  for (int j = 1; j <= spec.p; ++j) names.push_back("psi[" + std::to_string(j) + "]");
  for (int k = 1; k <= spec.m; ++k)
    for (int j = k + 1; j <= spec.m; ++j)
      names.push_back("phi[" + std::to_string(j) + "," + std::to_string(k) + "]");
  return names;
}

inline Eigen::VectorXd pack_params(const FactorParams& params, const UcfmSpec& spec) {
  Eigen::VectorXd out(packed_size(spec));
  int at = 0;
  for (int j = 0; j < spec.p; ++j) out[at++] = params.mu[j];
  for (int k = 0; k < spec.m; ++k)
    for (int j = 0; j < spec.p; ++j) out[at++] = params.lambda(j, k);
  for (int j = 0; j < spec.p; ++j) out[at++] = params.psi[j];
  for (int k = 0; k < spec.m; ++k)
    for (int j = k + 1; j < spec.m; ++j) out[at++] = params.phi(j, k);
  return out;
}

inline FactorParams unpack_params(const Eigen::VectorXd& flat, const UcfmSpec& spec) {
  FactorParams params;
  params.mu.resize(spec.p);
  params.lambda.resize(spec.p, spec.m);
  params.psi.resize(spec.p);
  params.phi = Eigen::MatrixXd::Identity(spec.m, spec.m);
  int at = 0;
  for (int j = 0; j < spec.p; ++j) params.mu[j] = flat[at++];
  for (int k = 0; k < spec.m; ++k)
    for (int j = 0; j < spec.p; ++j) params.lambda(j, k) = flat[at++];
  for (int j = 0; j < spec.p; ++j) params.psi[j] = flat[at++];
  for (int k = 0; k < spec.m; ++k)
    for (int j = k + 1; j < spec.m; ++j) {
      params.phi(j, k) = flat[at];
      params.phi(k, j) = flat[at];
      ++at;
    }
  return params;
}

// Lambda matrix of one packed draw row, without unpacking the rest.
inline Eigen::MatrixXd lambda_of_row(const Eigen::MatrixXd& samples, int row,
                                     const UcfmSpec& spec) {
  Eigen::MatrixXd lambda(spec.p, spec.m);
  const int base = spec.p;
  for (int k = 0; k < spec.m; ++k)
    for (int j = 0; j < spec.p; ++j)
      lambda(j, k) = samples(row, base + k * spec.p + j);
  return lambda;
}

}  // namespace bayesfa
