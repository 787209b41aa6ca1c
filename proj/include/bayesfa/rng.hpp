// Counter-based random streams (Philox 4x32-10) and the scalar/matrix
// samplers used by the Gibbs machinery. Streams are named: a (seed, tag)
// pair identifies a stream, so chains and pipeline stages draw from
// disjoint, reproducible sequences regardless of scheduling.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "bayesfa/detail/special.hpp"

namespace bayesfa {

class Philox {
 public:
  using result_type = std::uint64_t;

  Philox() : Philox(0, 0) {}
  Philox(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    if (have_) {
      have_ = false;
      return spare_;
    }
    std::uint32_t c0 = static_cast<std::uint32_t>(counter_);
    std::uint32_t c1 = static_cast<std::uint32_t>(counter_ >> 32);
    std::uint32_t c2 = static_cast<std::uint32_t>(stream_);
    std::uint32_t c3 = static_cast<std::uint32_t>(stream_ >> 32);
    std::uint32_t k0 = static_cast<std::uint32_t>(seed_);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed_ >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = 0xD2511F53ull * c0;
      const std::uint64_t p1 = 0xCD9E8D57ull * c2;
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      c0 = hi1 ^ c1 ^ k0;
      c1 = lo1;
      c2 = hi0 ^ c3 ^ k1;
      c3 = lo0;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    ++counter_;
    spare_ = (static_cast<std::uint64_t>(c2) << 32) | c3;
    have_ = true;
    return (static_cast<std::uint64_t>(c0) << 32) | c1;
  }

  std::uint64_t seed_value() const { return seed_; }
  std::uint64_t stream_value() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::uint64_t spare_ = 0;
  bool have_ = false;
};

// One stream of scalar draws. child("tag") derives an independent stream;
// the derivation is a pure function of (seed, parent stream, tag).
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : eng_(seed, stream) {}

  Rng child(std::string_view tag) const {
    std::uint64_t h = detail::fnv1a64(tag);
    h ^= eng_.stream_value() * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull;
    h ^= (h >> 33);
    h *= 0xFF51AFD7ED558CCDull;
    h ^= (h >> 33);
    return Rng(eng_.seed_value(), h);
  }
  Rng child(std::string_view tag, int index) const {
    return child(std::string(tag) + "/" + std::to_string(index));
  }

  // Collapses seed and stream into one value for seeding a component that
  // builds its own rng from a plain integer. The stream alone would not do:
  // it is a pure function of the tag path, blind to the root seed.
  std::uint64_t derived_seed() const {
    std::uint64_t h =
        eng_.seed_value() + 0x9E3779B97F4A7C15ull * (eng_.stream_value() | 1ull);
    h ^= (h >> 33);
    h *= 0xFF51AFD7ED558CCDull;
    h ^= (h >> 33);
    return h;
  }

  // Uniform on (0,1): strictly inside, so quantile transforms stay finite.
  double uniform() {
    const std::uint64_t x = eng_();
    return (static_cast<double>(x >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() { return detail::norm_quantile(uniform()); }

  double exponential() { return -std::log(uniform()); }

  // Standard normal conditioned on X > lo, by quantile transform of the
  // upper-tail probability: exact for any lo representable in double.
  double trunc_normal_lower(double lo) {
    const double q_lo = detail::norm_sf(lo);
    if (q_lo <= 0.0) {
      // Tail beyond double resolution; exponential tail approximation.
      return lo + exponential() / lo;
    }
    const double q = q_lo * uniform();
    return -detail::norm_quantile(q);
  }

  // Normal(mean, sd) conditioned on X > 0.
  double trunc_normal_positive(double mean, double sd) {
    return mean + sd * trunc_normal_lower(-mean / sd);
  }

  // Marsaglia-Tsang; shape > 0, unit rate.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // Inverse gamma with shape a and rate b (mean b/(a-1) for a > 1).
  double inv_gamma(double shape, double rate) { return rate / gamma(shape); }

  double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Wishart(df, scale) by Bartlett decomposition; df > dim - 1.
  Eigen::MatrixXd wishart(double df, const Eigen::MatrixXd& scale) {
    const int m = static_cast<int>(scale.rows());
    Eigen::LLT<Eigen::MatrixXd> llt(scale);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("wishart: scale matrix not positive definite");
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      a(i, i) = std::sqrt(chi_squared(df - i));
      for (int j = 0; j < i; ++j) a(i, j) = normal();
    }
    const Eigen::MatrixXd la = llt.matrixL() * a;
    return la * la.transpose();
  }

  // Inverse-Wishart(df, scale): inverse of Wishart(df, scale^{-1}).
  Eigen::MatrixXd inv_wishart(double df, const Eigen::MatrixXd& scale) {
    const Eigen::MatrixXd w = wishart(df, scale.llt().solve(
        Eigen::MatrixXd::Identity(scale.rows(), scale.cols())));
    return w.llt().solve(Eigen::MatrixXd::Identity(w.rows(), w.cols()));
  }

 private:
  Philox eng_;
};

// log density of InverseWishart(df, scale) at x.
inline double inv_wishart_logpdf(const Eigen::MatrixXd& x, double df,
                                 const Eigen::MatrixXd& scale) {
  const int m = static_cast<int>(x.rows());
  const Eigen::LLT<Eigen::MatrixXd> lx(x);
  const Eigen::LLT<Eigen::MatrixXd> ls(scale);
  if (lx.info() != Eigen::Success || ls.info() != Eigen::Success)
    throw std::runtime_error("inv_wishart_logpdf: matrix not positive definite");
  double logdet_x = 0.0, logdet_s = 0.0;
  for (int i = 0; i < m; ++i) {
    logdet_x += 2.0 * std::log(lx.matrixL()(i, i));
    logdet_s += 2.0 * std::log(ls.matrixL()(i, i));
  }
  const double tr = lx.solve(scale).trace();
  return 0.5 * df * logdet_s - 0.5 * df * m * std::log(2.0) -
         detail::lmvgamma(m, 0.5 * df) - 0.5 * (df + m + 1) * logdet_x - 0.5 * tr;
}

inline double inv_gamma_logpdf(double x, double shape, double rate) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) -
         rate / x;
}

}  // namespace bayesfa
