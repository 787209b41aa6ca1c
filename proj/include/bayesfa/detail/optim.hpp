// Derivative-free simplex minimizer, used to locate conditional modes of
// smooth low-dimensional densities.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace bayesfa::detail {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

inline NelderMeadResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& start, double step, int max_evals = 20000,
    double ftol = 1e-10) {
  const int d = static_cast<int>(start.size());
  NelderMeadResult result;
  std::vector<Eigen::VectorXd> xs(d + 1, start);
  std::vector<double> fs(d + 1);
  for (int i = 1; i <= d; ++i) xs[i][i - 1] += step;
  for (int i = 0; i <= d; ++i) fs[i] = f(xs[i]);
  result.evaluations = d + 1;

  std::vector<int> order(d + 1);
  while (result.evaluations < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order[0], worst = order[d], second = order[d - 1];
    if (fs[worst] - fs[best] <= ftol * (std::fabs(fs[best]) + ftol)) {
      result.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int i = 0; i <= d; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= d;

    const Eigen::VectorXd reflected = centroid + (centroid - xs[worst]);
    const double fr = f(reflected);
    ++result.evaluations;
    if (fr < fs[order[0]]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = f(expanded);
      ++result.evaluations;
      if (fe < fr) {
        xs[worst] = expanded;
        fs[worst] = fe;
      } else {
        xs[worst] = reflected;
        fs[worst] = fr;
      }
      continue;
    }
    if (fr < fs[second]) {
      xs[worst] = reflected;
      fs[worst] = fr;
      continue;
    }
    const Eigen::VectorXd contracted =
        centroid + 0.5 * ((fr < fs[worst] ? reflected : xs[worst]) - centroid);
    const double fc = f(contracted);
    ++result.evaluations;
    if (fc < std::min(fr, fs[worst])) {
      xs[worst] = contracted;
      fs[worst] = fc;
      continue;
    }
    for (int i = 0; i <= d; ++i) {  // shrink toward the best vertex
      if (i == best) continue;
      xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
      fs[i] = f(xs[i]);
      ++result.evaluations;
    }
  }

  int best = 0;
  for (int i = 1; i <= d; ++i)
    if (fs[i] < fs[best]) best = i;
  result.x = xs[best];
  result.value = fs[best];
  return result;
}

}  // namespace bayesfa::detail
