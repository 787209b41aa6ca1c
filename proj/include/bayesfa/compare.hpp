// Selection among inequality-constrained loading patterns nested in one
// fitted model: each constrained model's Bayes factor against the
// unconstrained model is the ratio of posterior to prior mass the
// constraints capture, estimated by counting draws.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bayesfa/constraints.hpp"
#include "bayesfa/model.hpp"
#include "bayesfa/rng.hpp"
#include "bayesfa/types.hpp"

namespace bayesfa {

struct BayesFactorEstimate {
  std::string name;
  long posterior_hits = 0;
  long posterior_total = 0;
  long prior_hits = 0;
  long prior_total = 0;
  double posterior_fraction = 0.0;
  double prior_fraction = 0.0;
  double bf = 0.0;
  // Delta-method standard error from two independent binomial counts,
  // with plug-in fractions; zero when the posterior fraction is zero.
  double mc_se = 0.0;
};

struct ModelComparison {
  std::vector<BayesFactorEstimate> estimates;
  // bf_matrix(s, t) compares model s against model t. The lower triangle
  // stores literal reciprocals of the upper, the diagonal literal ones.
  Eigen::MatrixXd bf_matrix;
  std::vector<double> pmp;
};

// Hits per constraint set over the retained posterior draws.
inline std::vector<long> posterior_constraint_hits(
    const Eigen::MatrixXd& samples, const UcfmSpec& spec,
    const std::vector<ConstraintSet>& sets) {
  std::vector<long> hits(sets.size(), 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Eigen::MatrixXd lambda = lambda_of_row(samples, static_cast<int>(i), spec);
    for (std::size_t s = 0; s < sets.size(); ++s)
      if (satisfies(lambda, sets[s])) ++hits[s];
  }
  return hits;
}

namespace compare_detail {

// One chunk of streamed prior loading matrices; only Lambda is generated,
// the other blocks never enter the constraints.
inline void prior_chunk_hits(const UcfmSpec& spec, double sd,
                             const std::vector<ConstraintSet>& sets, long count,
                             Rng rng, std::vector<long>* hits) {
  Eigen::MatrixXd lambda(spec.p, spec.m);
  std::vector<std::pair<int, int>> free_cells, positive_cells;
  for (int k = 1; k <= spec.m; ++k)
    for (int j = 1; j <= spec.p; ++j) {
      if (spec.is_zero(j, k)) continue;
      if (spec.is_positive(j, k))
        positive_cells.push_back({j - 1, k - 1});
      else
        free_cells.push_back({j - 1, k - 1});
    }
  lambda.setZero();
  for (long i = 0; i < count; ++i) {
    for (const auto& [j, k] : free_cells) lambda(j, k) = sd * rng.normal();
    for (const auto& [j, k] : positive_cells)
      lambda(j, k) = std::fabs(sd * rng.normal());
    for (std::size_t s = 0; s < sets.size(); ++s)
      if (satisfies(lambda, sets[s])) ++(*hits)[s];
  }
}

}  // namespace compare_detail

// Hits per constraint set over streamed prior draws of Lambda. Chunked so
// the count never materializes; the chunk streams are fixed, so the result
// does not depend on how many workers run.
inline std::vector<long> prior_constraint_hits(const UcfmSpec& spec,
                                               const PriorSpec& prior,
                                               const std::vector<ConstraintSet>& sets,
                                               long draws, std::uint64_t seed) {
  const long chunk = 1 << 16;
  const double sd = std::sqrt(prior.loading_variance);
  const Rng root = Rng(seed).child("prior-constraints");

  const long chunks = (draws + chunk - 1) / chunk;
  const unsigned workers =
      std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                         static_cast<unsigned>(chunks));
  std::vector<std::future<std::vector<long>>> futures;
  for (unsigned w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      std::vector<long> hits(sets.size(), 0);
      for (long c = w; c < chunks; c += workers) {
        const long count = std::min(chunk, draws - c * chunk);
        compare_detail::prior_chunk_hits(spec, sd, sets, count,
                                         root.child("chunk", static_cast<int>(c)),
                                         &hits);
      }
      return hits;
    }));
  }
  std::vector<long> hits(sets.size(), 0);
  for (auto& f : futures) {
    const auto part = f.get();
    for (std::size_t s = 0; s < sets.size(); ++s) hits[s] += part[s];
  }
  return hits;
}

inline BayesFactorEstimate bf_from_counts(const std::string& name,
                                          long posterior_hits, long posterior_total,
                                          long prior_hits, long prior_total) {
  BayesFactorEstimate est;
  est.name = name;
  est.posterior_hits = posterior_hits;
  est.posterior_total = posterior_total;
  est.prior_hits = prior_hits;
  est.prior_total = prior_total;
  est.posterior_fraction = static_cast<double>(posterior_hits) / posterior_total;
  est.prior_fraction = static_cast<double>(prior_hits) / prior_total;
  if (prior_hits == 0)
    throw NumericalError(
        "prior constraint fraction is zero for model '" + name + "' after " +
        std::to_string(prior_total) +
        " draws; increase prior draws or loosen the constraints");
  const double f = est.posterior_fraction;
  const double c = est.prior_fraction;
  est.bf = f / c;
  if (f > 0.0) {
    const double rel_f = (1.0 - f) / (f * posterior_total);
    const double rel_c = (1.0 - c) / (c * prior_total);
    est.mc_se = est.bf * std::sqrt(rel_f + rel_c);
  }
  return est;
}

// Posterior model probabilities from Bayes factors against the shared
// encompassing model; weights default to uniform.
inline std::vector<double> pmp_from_bf(const std::vector<double>& bf,
                                       std::vector<double> weights = {}) {
  if (weights.empty()) weights.assign(bf.size(), 1.0);
  if (weights.size() != bf.size())
    throw ConfigError("pmp_from_bf: one weight per model required");
  double total = 0.0;
  for (std::size_t s = 0; s < bf.size(); ++s) {
    if (weights[s] < 0.0) throw ConfigError("pmp_from_bf: negative weight");
    total += weights[s] * bf[s];
  }
  if (!(total > 0.0))
    throw NumericalError("pmp_from_bf: no model has positive weighted support");
  std::vector<double> pmp(bf.size());
  for (std::size_t s = 0; s < bf.size(); ++s) pmp[s] = weights[s] * bf[s] / total;
  return pmp;
}

inline Eigen::MatrixXd pairwise_bf_matrix(const std::vector<double>& bf) {
  const int s = static_cast<int>(bf.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Ones(s, s);
  for (int a = 0; a < s; ++a)
    for (int b = a + 1; b < s; ++b) {
      out(a, b) = bf[a] / bf[b];
      out(b, a) = 1.0 / out(a, b);
    }
  return out;
}

inline ModelComparison compare_models(
    const PosteriorDraws& posterior,
    const std::vector<std::pair<std::string, ConstraintSet>>& models,
    const PriorSpec& prior, long prior_draws, std::uint64_t seed,
    const std::vector<double>& weights = {}) {
  if (models.empty()) throw ConfigError("compare_models: no models");
  if (posterior.count() < 1) throw DataError("compare_models: no posterior draws");
  if (prior_draws < 1) throw ConfigError("compare_models: prior_draws must be positive");
  std::vector<ConstraintSet> sets;
  for (const auto& [name, cs] : models) {
    if (cs.p != posterior.spec.p || cs.m != posterior.spec.m)
      throw ConfigError("compare_models: constraint set for '" + name +
                        "' does not match the fitted pattern");
    sets.push_back(cs);
  }

  const auto post_hits =
      posterior_constraint_hits(posterior.samples, posterior.spec, sets);
  const auto prior_hits =
      prior_constraint_hits(posterior.spec, prior, sets, prior_draws, seed);

  ModelComparison out;
  std::vector<double> bf;
  for (std::size_t s = 0; s < models.size(); ++s) {
    out.estimates.push_back(bf_from_counts(models[s].first, post_hits[s],
                                           posterior.count(), prior_hits[s],
                                           prior_draws));
    bf.push_back(out.estimates.back().bf);
  }
  out.bf_matrix = pairwise_bf_matrix(bf);
  out.pmp = pmp_from_bf(bf, weights);
  return out;
}

}  // namespace bayesfa
