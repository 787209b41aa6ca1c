#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bayesfa/model.hpp"
#include "bayesfa/rng.hpp"
#include "support/test_support.hpp"

using namespace bayesfa;

namespace {

// Triple-loop implied covariance, no matrix algebra shared with the library.
Eigen::MatrixXd implied_bruteforce(const Eigen::MatrixXd& lambda,
                                   const Eigen::MatrixXd& phi,
                                   const Eigen::VectorXd& psi) {
  const int p = static_cast<int>(lambda.rows());
  const int m = static_cast<int>(lambda.cols());
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) s(a, b) += lambda(a, i) * phi(i, j) * lambda(b, j);
      if (a == b) s(a, b) += psi[a];
    }
  return s;
}

FactorParams random_params(const UcfmSpec& spec, Rng& rng) {
  FactorParams p;
  p.mu = 0.3 * rng.normal_vector(spec.p);
  p.lambda.resize(spec.p, spec.m);
  for (int j = 1; j <= spec.p; ++j)
    for (int k = 1; k <= spec.m; ++k)
      p.lambda(j - 1, k - 1) = spec.is_zero(j, k) ? 0.0
                               : spec.is_positive(j, k)
                                   ? std::fabs(rng.normal()) + 0.1
                                   : 0.5 * rng.normal();
  p.psi = Eigen::VectorXd::Constant(spec.p, 0.3) +
          0.5 * rng.normal_vector(spec.p).cwiseAbs();
  if (spec.m == 1) {
    p.phi = Eigen::MatrixXd::Identity(1, 1);
  } else {
    Eigen::MatrixXd w = rng.wishart(spec.m + 3, Eigen::MatrixXd::Identity(spec.m, spec.m));
    Eigen::VectorXd d = w.diagonal().array().sqrt().inverse();
    p.phi = d.asDiagonal() * w * d.asDiagonal();
  }
  return p;
}

}  // namespace

TEST_CASE("implied covariance reproduces the published reproduced correlations") {
  const auto t = testsup::metabolic_truth();
  const Eigen::MatrixXd sigma = implied_covariance(t.lambda, t.phi, t.psi);
  // (TRIG, BMI), (INSRES, BMI), (GLUBASE, INSRES)
  REQUIRE(std::fabs(sigma(1, 0) - 0.101) < 0.005);
  REQUIRE(std::fabs(sigma(3, 0) - 0.291) < 0.005);
  REQUIRE(std::fabs(sigma(4, 3) - 0.384) < 0.005);
}

TEST_CASE("implied covariance matches the triple-loop oracle") {
  Rng rng(31, 0);
  const auto spec = testsup::metabolic_spec();
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_params(spec, rng);
    const auto direct = implied_covariance(p.lambda, p.phi, p.psi);
    const auto brute = implied_bruteforce(p.lambda, p.phi, p.psi);
    REQUIRE((direct - brute).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("identity lambda and phi give psi plus one on the diagonal") {
  const int p = 3;
  const Eigen::MatrixXd lambda = Eigen::MatrixXd::Identity(p, p);
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(p, p);
  const Eigen::VectorXd psi = Eigen::VectorXd::Constant(p, 0.4);
  const auto sigma = implied_covariance(lambda, phi, psi);
  REQUIRE(sigma.isApprox(1.4 * Eigen::MatrixXd::Identity(p, p), 1e-14));
}

TEST_CASE("observed loglik is invariant under oblique rotation") {
  Rng rng(32, 0);
  const auto spec = testsup::metabolic_spec();
  const auto params = random_params(spec, rng);
  const Eigen::MatrixXd z = testsup::generate_data(params, 50, 99);
  const double base = observed_loglik(z, params);
  for (int trial = 0; trial < 100; ++trial) {
    // Random invertible R: (Lambda R, R^-1 Phi R^-T) leaves Sigma unchanged.
    Eigen::MatrixXd r(2, 2);
    do {
      for (int i = 0; i < 4; ++i) r(i / 2, i % 2) = rng.normal();
    } while (std::fabs(r.determinant()) < 0.1);
    FactorParams rotated = params;
    rotated.lambda = params.lambda * r;
    const Eigen::MatrixXd rinv = r.inverse();
    rotated.phi = rinv * params.phi * rinv.transpose();
    REQUIRE(std::fabs(observed_loglik(z, rotated) - base) < 1e-8 * std::fabs(base));
  }
}

TEST_CASE("observed loglik matches monte-carlo integration over factor scores") {
  // 3 variables, 1 factor, 5 rows: integrate the complete-data likelihood
  // over xi_i with 1e6 draws per row.
  UcfmSpec spec;
  spec.p = 3;
  spec.m = 1;
  spec.positive_cells = {{1, 1}};
  Rng rng(33, 0);
  FactorParams params;
  params.mu = Eigen::Vector3d(0.2, -0.1, 0.05);
  params.lambda = Eigen::MatrixXd(3, 1);
  params.lambda << 0.8, 0.6, -0.4;
  params.psi = Eigen::Vector3d(0.5, 0.7, 0.9);
  params.phi = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd z = testsup::generate_data(params, 5, 44);

  const int draws = 1000000;
  std::vector<double> xs(draws);
  for (auto& x : xs) x = rng.normal();
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> logs(draws);
    for (int s = 0; s < draws; ++s) {
      double lp = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double resid = z(i, j) - params.mu[j] - params.lambda(j, 0) * xs[s];
        lp += detail::norm_logpdf(resid / std::sqrt(params.psi[j])) -
              0.5 * std::log(params.psi[j]);
      }
      logs[s] = lp;
    }
    total += detail::logsumexp(logs) - std::log(static_cast<double>(draws));
  }
  const double exact = observed_loglik(z, params);
  REQUIRE(std::fabs(exact - total) < 0.02);
}

TEST_CASE("observed loglik of the null model is the product of marginals") {
  FactorParams params;
  params.mu = Eigen::Vector2d(0.0, 0.0);
  params.lambda = Eigen::MatrixXd::Zero(2, 1);
  params.psi = Eigen::Vector2d(1.0, 2.0);
  params.phi = Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd z(2, 2);
  z << 0.5, -1.0, 1.5, 0.3;
  double expect = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      expect += detail::norm_logpdf(z(i, j) / std::sqrt(params.psi[j])) -
                0.5 * std::log(params.psi[j]);
  REQUIRE(observed_loglik(z, params) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("pack and unpack are mutual inverses") {
  Rng rng(34, 0);
  const auto spec = testsup::metabolic_spec();
  const auto params = random_params(spec, rng);
  const Eigen::VectorXd flat = pack_params(params, spec);
  REQUIRE(flat.size() == packed_size(spec));
  REQUIRE(static_cast<int>(packed_names(spec).size()) == flat.size());
  const auto back = unpack_params(flat, spec);
  REQUIRE(back.mu == params.mu);
  REQUIRE(back.lambda == params.lambda);
  REQUIRE(back.psi == params.psi);
  REQUIRE(back.phi.isApprox(params.phi, 1e-15));
  REQUIRE(pack_params(back, spec) == flat);
}

TEST_CASE("packed names follow the documented flat order") {
  const auto names = packed_names(testsup::metabolic_spec());
  REQUIRE(names[0] == "mu[1]");
  REQUIRE(names[8] == "lambda[1,1]");
  REQUIRE(names[16] == "lambda[1,2]");
  REQUIRE(names[24] == "psi[1]");
  REQUIRE(names[32] == "phi[2,1]");
  REQUIRE(names.size() == 33);
}

TEST_CASE("prior density integrates polarity truncation correctly") {
  // Doubling a half-normal: density at x>0 is twice the normal density.
  const auto spec = testsup::metabolic_spec();
  PriorSpec prior;
  prior.loading_variance = 1.0;
  auto params = testsup::metabolic_truth();
  const double base = log_prior_density(params, spec, prior);
  REQUIRE(std::isfinite(base));
  // Flip a polarity cell negative: prior support excludes it.
  params.lambda(2, 1) = -0.1;
  REQUIRE(log_prior_density(params, spec, prior) ==
          -std::numeric_limits<double>::infinity());
}
