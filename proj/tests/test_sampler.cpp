#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bayesfa/model.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/sampler.hpp"
#include "support/test_support.hpp"

using namespace bayesfa;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

int name_index(const UcfmSpec& spec, const std::string& name) {
  const auto names = packed_names(spec);
  const auto it = std::find(names.begin(), names.end(), name);
  REQUIRE(it != names.end());
  return static_cast<int>(it - names.begin());
}

double column_mean(const Eigen::MatrixXd& m, int col) {
  return m.col(col).mean();
}

double column_var(const Eigen::MatrixXd& m, int col) {
  const double mu = column_mean(m, col);
  return (m.col(col).array() - mu).square().sum() / (m.rows() - 1);
}

// Integrated autocorrelation time by the initial positive sequence rule:
// pairwise sums of autocovariances are accumulated while they stay positive.
double iact(const Eigen::VectorXd& x) {
  const int g = static_cast<int>(x.size());
  const double mean = x.mean();
  const Eigen::VectorXd c = x.array() - mean;
  const double gamma0 = c.squaredNorm() / g;
  double sum = -gamma0;
  for (int m = 0; 2 * m + 1 < g / 2; ++m) {
    double pair = 0.0;
    for (int j : {2 * m, 2 * m + 1}) {
      double gj = 0.0;
      for (int t = 0; t + j < g; ++t) gj += c[t] * c[t + j];
      pair += gj / g;
    }
    if (pair <= 0.0) break;
    sum += 2.0 * pair;
  }
  return std::max(1.0, sum / gamma0);
}

}  // namespace

TEST_CASE("gibbs draws are reproducible and seed-sensitive") {
  const auto spec = testsup::metabolic_spec();
  const auto data = testsup::generate_data(testsup::metabolic_truth(), 120, 42);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 200;
  settings.burn_in = 50;
  settings.chains = 2;

  const auto a = gibbs_run(data, spec, prior, settings, 7);
  const auto b = gibbs_run(data, spec, prior, settings, 7);
  const auto c = gibbs_run(data, spec, prior, settings, 8);
  REQUIRE(a.samples == b.samples);
  REQUIRE(a.phi_accept_rate == b.phi_accept_rate);
  REQUIRE(a.samples != c.samples);
  REQUIRE(a.count() == 400);
}

TEST_CASE("gibbs draws respect the restriction pattern") {
  const auto spec = testsup::metabolic_spec();
  const auto data = testsup::generate_data(testsup::metabolic_truth(), 150, 43);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 400;
  settings.burn_in = 100;

  const auto draws = gibbs_run(data, spec, prior, settings, 11);
  const int z1 = name_index(spec, "lambda[3,1]");
  const int z2 = name_index(spec, "lambda[5,2]");
  const int p1 = name_index(spec, "lambda[3,2]");
  const int p2 = name_index(spec, "lambda[5,1]");
  const int phi = name_index(spec, "phi[2,1]");
  for (int i = 0; i < draws.count(); ++i) {
    REQUIRE(draws.samples(i, z1) == 0.0);
    REQUIRE(draws.samples(i, z2) == 0.0);
    REQUIRE(draws.samples(i, p1) > 0.0);
    REQUIRE(draws.samples(i, p2) > 0.0);
    REQUIRE(std::fabs(draws.samples(i, phi)) < 1.0);
  }
  for (int j = 0; j < spec.p; ++j) {
    const int c = name_index(spec, "psi[" + std::to_string(j + 1) + "]");
    REQUIRE((draws.samples.col(c).array() > 0.0).all());
  }
  REQUIRE(draws.phi_accept_rate > 0.05);
}

TEST_CASE("null pattern posterior matches direct quadrature") {
  // With every loading pinned to zero the coordinates decouple into
  // location-scale problems whose exact posterior is one numerical integral
  // over the uniqueness, the location integrated out in closed form.
  UcfmSpec spec;
  spec.p = 3;
  spec.m = 1;
  spec.zero_cells = {{1, 1}, {2, 1}, {3, 1}};
  REQUIRE(validate_spec(spec).empty());

  const int n = 60;
  const Eigen::Vector3d mu0(0.3, -0.2, 0.1);
  const Eigen::Vector3d psi0(1.2, 0.8, 1.0);
  Rng rng(314, 5);
  Eigen::MatrixXd data(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j)
      data(i, j) = mu0[j] + std::sqrt(psi0[j]) * rng.normal();

  PriorSpec prior;
  prior.loading_variance = 1.0;  // also the location prior variance
  prior.psi_shape = 2.5;
  prior.psi_rate = 1.5;

  ChainSettings settings;
  settings.iterations = 30000;
  settings.burn_in = 2000;
  const auto draws = gibbs_run(data, spec, prior, settings, 99);

  const double v = prior.loading_variance;
  for (int j = 0; j < 3; ++j) {
    const double yty = data.col(j).squaredNorm();
    const double s = data.col(j).sum();

    // Marginal over the location: y ~ N(0, psi I + v 11'). Sherman-Morrison
    // gives the determinant and quadratic form in closed form.
    auto log_post = [&](double psi) {
      const double logdet = (n - 1) * std::log(psi) + std::log(psi + n * v);
      const double quad = yty / psi - v * s * s / (psi * (psi + n * v));
      const double loglik = -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
      return loglik + inv_gamma_logpdf(psi, prior.psi_shape, prior.psi_rate);
    };

    const int grid = 6000;
    const double lo = std::log(0.02), hi = std::log(30.0);
    double max_lp = -1e300;
    std::vector<double> lp(grid), psi_grid(grid);
    for (int g = 0; g < grid; ++g) {
      const double u = lo + (hi - lo) * (g + 0.5) / grid;
      psi_grid[g] = std::exp(u);
      lp[g] = log_post(psi_grid[g]) + u;  // du measure carries a psi factor
      max_lp = std::max(max_lp, lp[g]);
    }
    double z = 0, e_psi = 0, e_psi2 = 0, e_mu = 0, e_mu2 = 0;
    for (int g = 0; g < grid; ++g) {
      const double w = std::exp(lp[g] - max_lp);
      const double psi = psi_grid[g];
      const double mu_mean = v * s / (n * v + psi);
      const double mu_var = v * psi / (n * v + psi);
      z += w;
      e_psi += w * psi;
      e_psi2 += w * psi * psi;
      e_mu += w * mu_mean;
      e_mu2 += w * (mu_mean * mu_mean + mu_var);
    }
    e_psi /= z;
    e_psi2 /= z;
    e_mu /= z;
    e_mu2 /= z;
    const double sd_psi = std::sqrt(e_psi2 - e_psi * e_psi);
    const double sd_mu = std::sqrt(e_mu2 - e_mu * e_mu);

    const int psi_col = name_index(spec, "psi[" + std::to_string(j + 1) + "]");
    const int mu_col = name_index(spec, "mu[" + std::to_string(j + 1) + "]");
    REQUIRE_THAT(column_mean(draws.samples, psi_col),
                 WithinAbs(e_psi, 0.15 * sd_psi + 1e-3));
    REQUIRE_THAT(column_mean(draws.samples, mu_col),
                 WithinAbs(e_mu, 0.15 * sd_mu + 1e-3));
    REQUIRE_THAT(std::sqrt(column_var(draws.samples, psi_col)),
                 WithinRel(sd_psi, 0.1));
    REQUIRE_THAT(std::sqrt(column_var(draws.samples, mu_col)),
                 WithinRel(sd_mu, 0.1));
  }
}

TEST_CASE("posterior means recover the generating parameters") {
  const auto spec = testsup::metabolic_spec();
  const auto truth = testsup::metabolic_truth();
  const auto data = testsup::generate_data(truth, 400, 2024);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 6000;
  settings.burn_in = 1500;

  const auto draws = gibbs_run(data, spec, prior, settings, 500);

  // Posterior means sit within a few posterior standard deviations of the
  // generating values; the scale-aware distance keeps weakly identified
  // cells from dominating the criterion.
  auto within_sds = [&](const std::string& name, double target, double sds) {
    const int col = name_index(spec, name);
    const double mean = column_mean(draws.samples, col);
    const double sd = std::sqrt(column_var(draws.samples, col));
    INFO(name << ": mean " << mean << ", target " << target << ", sd " << sd);
    REQUIRE(std::fabs(mean - target) < sds * sd + 0.02);
  };
  for (int j = 1; j <= spec.p; ++j)
    for (int k = 1; k <= spec.m; ++k) {
      if (spec.is_zero(j, k)) continue;
      within_sds("lambda[" + std::to_string(j) + "," + std::to_string(k) + "]",
                 truth.lambda(j - 1, k - 1), 3.5);
    }
  within_sds("phi[2,1]", testsup::metabolic_phi()(1, 0), 3.5);
  for (int j = 0; j < spec.p; ++j) {
    within_sds("psi[" + std::to_string(j + 1) + "]", truth.psi[j], 3.5);
    within_sds("mu[" + std::to_string(j + 1) + "]", 0.0, 3.5);
  }

  SECTION("two-half means agree within monte-carlo error") {
    const int g = draws.count();
    for (const auto& name : {std::string("mu[1]"), std::string("lambda[1,1]"),
                             std::string("psi[1]"), std::string("phi[2,1]")}) {
      const int col = name_index(spec, name);
      const Eigen::VectorXd col_draws = draws.samples.col(col);
      const Eigen::VectorXd first = col_draws.head(g / 2);
      const Eigen::VectorXd second = col_draws.tail(g / 2);
      // The correlation trace mixes slowly, so the halves are compared on
      // the autocorrelation-adjusted scale. This is a gross-failure
      // detector: the near-singular ridge shows up as z far above 10.
      const double tau = iact(col_draws);
      const double var = (col_draws.array() - col_draws.mean()).square().sum() /
                         (g - 1);
      const double se = std::sqrt(var * tau * (2.0 / (g / 2)));
      const double zscore = (first.mean() - second.mean()) / se;
      INFO(name << ": tau " << tau << ", z " << zscore);
      REQUIRE(std::fabs(zscore) < 5.0);
    }
  }
}

TEST_CASE("correlation step matches quadrature of its exact conditional") {
  const int n = 150;
  Eigen::Matrix2d phi_true;
  phi_true << 1.0, 0.5, 0.5, 1.0;
  Rng rng(777, 3);
  const Eigen::Matrix2d chol = phi_true.llt().matrixL();
  Eigen::MatrixXd xi(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d e(rng.normal(), rng.normal());
    xi.row(i) = (chol * e).transpose();
  }

  const int df = 4;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(2, 2);
  Rng step_rng(888, 4);
  const int total = 26000, burn = 1000;
  std::vector<double> r_draws;
  r_draws.reserve(total - burn);
  int accepts = 0;
  for (int t = 0; t < total; ++t) {
    accepts += phi_px_step(step_rng, xi, phi, df) ? 1 : 0;
    if (t >= burn) r_draws.push_back(phi(1, 0));
  }
  REQUIRE(static_cast<double>(accepts) / total > 0.15);

  // Exact conditional on a grid of the single off-diagonal entry.
  const int grid = 3001;
  std::vector<double> rs(grid), lp(grid);
  double max_lp = -1e300;
  for (int g = 0; g < grid; ++g) {
    const double r = -0.995 + 1.99 * g / (grid - 1);
    Eigen::Matrix2d c;
    c << 1.0, r, r, 1.0;
    rs[g] = r;
    lp[g] = mvn_zero_loglik(xi, c) + correlation_prior_logpdf_unnorm(c, df);
    max_lp = std::max(max_lp, lp[g]);
  }
  double z = 0, e_r = 0, e_r2 = 0;
  for (int g = 0; g < grid; ++g) {
    const double w = std::exp(lp[g] - max_lp);
    z += w;
    e_r += w * rs[g];
    e_r2 += w * rs[g] * rs[g];
  }
  e_r /= z;
  e_r2 /= z;
  const double sd_r = std::sqrt(e_r2 - e_r * e_r);

  double mcmc_mean = 0;
  for (double r : r_draws) mcmc_mean += r;
  mcmc_mean /= static_cast<double>(r_draws.size());
  double mcmc_var = 0;
  for (double r : r_draws) mcmc_var += (r - mcmc_mean) * (r - mcmc_mean);
  mcmc_var /= static_cast<double>(r_draws.size() - 1);

  REQUIRE_THAT(mcmc_mean, WithinAbs(e_r, 0.02));
  REQUIRE_THAT(std::sqrt(mcmc_var), WithinRel(sd_r, 0.15));

  // Tail probability at the quadrature mean.
  double cdf_quad = 0;
  for (int g = 0; g < grid; ++g)
    if (rs[g] < e_r) cdf_quad += std::exp(lp[g] - max_lp);
  cdf_quad /= z;
  double cdf_mcmc = 0;
  for (double r : r_draws) cdf_mcmc += r < e_r ? 1.0 : 0.0;
  cdf_mcmc /= static_cast<double>(r_draws.size());
  REQUIRE_THAT(cdf_mcmc, WithinAbs(cdf_quad, 0.03));
}

TEST_CASE("correlation step with no data targets the induced prior") {
  // At df = m + 1 the induced prior has uniform off-diagonal marginals, and
  // with an empty score matrix every proposal is accepted exactly.
  const Eigen::MatrixXd xi(0, 2);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(2, 2);
  Rng rng(1234, 9);
  const int total = 20000;
  int accepts = 0;
  std::vector<double> rs;
  rs.reserve(total);
  for (int t = 0; t < total; ++t) {
    accepts += phi_px_step(rng, xi, phi, 3) ? 1 : 0;
    rs.push_back(phi(1, 0));
  }
  REQUIRE(accepts == total);
  double mean = 0;
  for (double r : rs) mean += r;
  mean /= total;
  REQUIRE_THAT(mean, WithinAbs(0.0, 0.03));
  for (double t : {-0.5, 0.0, 0.5}) {
    double cdf = 0;
    for (double r : rs) cdf += r < t ? 1.0 : 0.0;
    cdf /= total;
    REQUIRE_THAT(cdf, WithinAbs(0.5 * (t + 1.0), 0.02));
  }
}

TEST_CASE("prior sampling reproduces the prior moments") {
  const auto spec = testsup::metabolic_spec();
  PriorSpec prior;
  prior.loading_variance = 1.0;
  prior.psi_shape = 3.0;
  prior.psi_rate = 2.0;
  prior.phi_df = 3;

  const int count = 40000;
  const auto draws = sample_prior(spec, prior, count, 5150);
  REQUIRE(draws.count() == count);
  REQUIRE(draws.samples == sample_prior(spec, prior, count, 5150).samples);

  const int free_col = name_index(spec, "lambda[1,1]");
  REQUIRE_THAT(column_mean(draws.samples, free_col), WithinAbs(0.0, 0.02));
  REQUIRE_THAT(column_var(draws.samples, free_col), WithinAbs(1.0, 0.05));

  const int pos_col = name_index(spec, "lambda[5,1]");
  REQUIRE((draws.samples.col(pos_col).array() > 0.0).all());
  REQUIRE_THAT(column_mean(draws.samples, pos_col),
               WithinAbs(std::sqrt(2.0 / M_PI), 0.02));

  const int zero_col = name_index(spec, "lambda[3,1]");
  REQUIRE((draws.samples.col(zero_col).array() == 0.0).all());

  const int psi_col = name_index(spec, "psi[1]");
  REQUIRE_THAT(column_mean(draws.samples, psi_col), WithinAbs(1.0, 0.03));

  const int phi_col = name_index(spec, "phi[2,1]");
  REQUIRE_THAT(column_mean(draws.samples, phi_col), WithinAbs(0.0, 0.02));
  double inside = 0;
  for (int i = 0; i < count; ++i)
    inside += std::fabs(draws.samples(i, phi_col)) < 0.5 ? 1.0 : 0.0;
  REQUIRE_THAT(inside / count, WithinAbs(0.5, 0.02));
}

TEST_CASE("draw dumps round-trip exactly") {
  const auto spec = testsup::metabolic_spec();
  const auto data = testsup::generate_data(testsup::metabolic_truth(), 80, 77);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 50;
  settings.burn_in = 10;
  const auto draws = gibbs_run(data, spec, prior, settings, 3);

  testsup::TempDir dir("draws");
  const std::string path = (dir.path() / "draws.tsv").string();
  write_draws(path, draws.samples, spec);
  const Eigen::MatrixXd back = read_draws(path, spec);
  REQUIRE(back == draws.samples);

  SECTION("column mismatch is rejected") {
    UcfmSpec other;
    other.p = spec.p;
    other.m = 1;  // fewer packed columns than the written dump
    REQUIRE_THROWS_AS(read_draws(path, other), DataError);
  }
  SECTION("non-numeric cells are rejected with the row") {
    std::ofstream bad((dir.path() / "bad.tsv").string());
    const auto names = packed_names(spec);
    for (std::size_t j = 0; j < names.size(); ++j)
      bad << (j ? "\t" : "") << names[j];
    bad << '\n';
    for (std::size_t j = 0; j < names.size(); ++j) bad << (j ? "\t" : "") << "x";
    bad << '\n';
    bad.close();
    REQUIRE_THROWS_MATCHES(read_draws((dir.path() / "bad.tsv").string(), spec),
                           DataError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("row 2")));
  }
}

TEST_CASE("observer sees every retained sweep of a single chain") {
  const auto spec = testsup::metabolic_spec();
  const auto data = testsup::generate_data(testsup::metabolic_truth(), 60, 13);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 40;
  settings.burn_in = 20;

  int calls = 0;
  const auto observer = [&](const FactorParams& params, const Eigen::MatrixXd& xi) {
    ++calls;
    REQUIRE(xi.rows() == 60);
    REQUIRE(xi.cols() == 2);
    REQUIRE(params.lambda(2, 0) == 0.0);
  };
  gibbs_run(data, spec, prior, settings, 21, {}, {}, observer);
  REQUIRE(calls == 40);

  settings.chains = 2;
  REQUIRE_THROWS_AS(gibbs_run(data, spec, prior, settings, 21, {}, {}, observer),
                    ConfigError);
}

TEST_CASE("fixed blocks stay at their initial values") {
  const auto spec = testsup::metabolic_spec();
  const auto truth = testsup::metabolic_truth();
  const auto data = testsup::generate_data(truth, 100, 31);
  PriorSpec prior;
  ChainSettings settings;
  settings.iterations = 60;
  settings.burn_in = 20;

  SECTION("all blocks fixed") {
    FixedBlocks fixed{true, true, true, true};
    const auto draws = gibbs_run(data, spec, prior, settings, 17, truth, fixed);
    const Eigen::VectorXd packed = pack_params(truth, spec);
    for (int i = 0; i < draws.count(); ++i)
      REQUIRE(draws.samples.row(i).transpose() == packed);
    REQUIRE(draws.phi_accept_rate == 1.0);
  }
  SECTION("only the uniquenesses fixed") {
    FixedBlocks fixed;
    fixed.psi = true;
    const auto draws = gibbs_run(data, spec, prior, settings, 17, truth, fixed);
    const int psi_col = name_index(spec, "psi[1]");
    const int lam_col = name_index(spec, "lambda[1,1]");
    REQUIRE((draws.samples.col(psi_col).array() == truth.psi[0]).all());
    REQUIRE(column_var(draws.samples, lam_col) > 0.0);
  }
}
