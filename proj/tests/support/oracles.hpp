// Independent reference estimators used to cross-check marginal likelihood
// code. Deliberately written from different identities than the library:
// quadrature over the integrated column density, and iterative bridge
// sampling between two posteriors.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "bayesfa/model.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/types.hpp"

namespace testsup {

// log of the marginal density of one column under the zero-loading model:
// y ~ N(mu 1, psi I) with mu ~ N(0, v) integrated out by Sherman-Morrison
// and psi ~ IG(a, b) integrated by quadrature on the log scale.
inline double zero_model_column_marginal(const Eigen::VectorXd& y, double a,
                                         double b, double v) {
  const int n = static_cast<int>(y.size());
  const double yty = y.squaredNorm();
  const double s = y.sum();
  const double center = std::log(std::max(yty / n, 1e-8));
  const int points = 8000;
  const double lo = center - 12.0, hi = center + 12.0;
  const double du = (hi - lo) / points;
  std::vector<double> terms(points);
  for (int g = 0; g < points; ++g) {
    const double u = lo + du * (g + 0.5);
    const double psi = std::exp(u);
    const double logdet = (n - 1) * std::log(psi) + std::log(psi + n * v);
    const double quad = yty / psi - v * s * s / (psi * (psi + n * v));
    const double loglik = -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
    terms[g] = bayesfa::inv_gamma_logpdf(psi, a, b) + loglik + u;
  }
  return bayesfa::detail::logsumexp(terms) + std::log(du);
}

// Iterative bridge estimate of log(m_full / m_train) from draws of both
// posteriors, with q = exp(loglik + log prior), normalized for one factor.
inline double bridge_log_ratio(const Eigen::MatrixXd& full,
                               const Eigen::MatrixXd& train,
                               const bayesfa::UcfmSpec& spec,
                               const bayesfa::PriorSpec& prior,
                               const Eigen::MatrixXd& full_draws,
                               const Eigen::MatrixXd& train_draws) {
  using namespace bayesfa;
  const auto log_q = [&](const Eigen::MatrixXd& data, const Eigen::VectorXd& flat) {
    const FactorParams params = unpack_params(flat, spec);
    return observed_loglik(data, params) + log_prior_density(params, spec, prior);
  };
  const long n1 = full_draws.rows(), n2 = train_draws.rows();
  Eigen::VectorXd qf1(n1), qt1(n1), qf2(n2), qt2(n2);
  for (long i = 0; i < n1; ++i) {
    qf1[i] = log_q(full, full_draws.row(i).transpose());
    qt1[i] = log_q(train, full_draws.row(i).transpose());
  }
  for (long j = 0; j < n2; ++j) {
    qf2[j] = log_q(full, train_draws.row(j).transpose());
    qt2[j] = log_q(train, train_draws.row(j).transpose());
  }
  const double ls1 = std::log(double(n1) / (n1 + n2));
  const double ls2 = std::log(double(n2) / (n1 + n2));
  const auto lse2 = [](double x, double y) {
    const double m = std::max(x, y);
    return m + std::log(std::exp(x - m) + std::exp(y - m));
  };

  // Start from the one-sided estimate E_train[q_full / q_train].
  std::vector<double> start(n2);
  for (long j = 0; j < n2; ++j) start[j] = qf2[j] - qt2[j];
  double log_r = detail::logsumexp(start) - std::log(double(n2));
  for (int it = 0; it < 200; ++it) {
    std::vector<double> num(n2), den(n1);
    for (long j = 0; j < n2; ++j)
      num[j] = qf2[j] - lse2(ls1 + qf2[j], ls2 + log_r + qt2[j]);
    for (long i = 0; i < n1; ++i)
      den[i] = qt1[i] - lse2(ls1 + qf1[i], ls2 + log_r + qt1[i]);
    log_r = (detail::logsumexp(num) - std::log(double(n2))) -
            (detail::logsumexp(den) - std::log(double(n1)));
  }
  return log_r;
}

}  // namespace testsup
