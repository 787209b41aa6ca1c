#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "bayesfa/types.hpp"
#include "support/test_support.hpp"

using namespace bayesfa;

namespace {
bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}
}  // namespace

TEST_CASE("factor upper bound from the existence inequality") {
  REQUIRE(factor_upper_bound(8).value() == 4);
  REQUIRE(factor_upper_bound(3).value() == 1);
  REQUIRE(factor_upper_bound(4).value() == 1);
  REQUIRE_FALSE(factor_upper_bound(2).has_value());
  REQUIRE_FALSE(factor_upper_bound(1).has_value());
}

TEST_CASE("two-factor metabolic pattern validates cleanly") {
  REQUIRE(validate_spec(testsup::metabolic_spec()).empty());
}

TEST_CASE("existence bound violation is reported") {
  UcfmSpec spec;
  spec.p = 8;
  spec.m = 5;
  const auto v = validate_spec(spec);
  REQUIRE(mentions(v, "existence bound"));
}

TEST_CASE("conflicting cell assignments are reported") {
  auto spec = testsup::metabolic_spec();
  spec.positive_cells.push_back({3, 1});  // already a zero cell
  REQUIRE(mentions(validate_spec(spec), "cell conflict"));
}

TEST_CASE("out of range cells are reported") {
  auto spec = testsup::metabolic_spec();
  spec.zero_cells.push_back({9, 1});
  REQUIRE(mentions(validate_spec(spec), "cell out of range"));
}

TEST_CASE("minimal-conditions violations are reported") {
  auto spec = testsup::metabolic_spec();

  SECTION("missing anchor zero") {
    spec.zero_cells = {{3, 1}};  // anchor row 5 lost its zero
    REQUIRE(mentions(validate_spec(spec), "minimal conditions"));
  }
  SECTION("two positive cells on one factor") {
    spec.positive_cells = {{3, 2}, {6, 2}};
    REQUIRE(mentions(validate_spec(spec), "minimal conditions"));
  }
  SECTION("extra zero outside anchor rows") {
    spec.zero_cells.push_back({7, 1});
    REQUIRE(mentions(validate_spec(spec), "minimal conditions"));
  }
}

TEST_CASE("all-zero null pattern is accepted") {
  UcfmSpec spec;
  spec.p = 3;
  spec.m = 1;
  for (int j = 1; j <= 3; ++j) spec.zero_cells.push_back({j, 1});
  REQUIRE(validate_spec(spec).empty());
}

TEST_CASE("parameter validation flags each broken invariant") {
  const auto spec = testsup::metabolic_spec();
  auto params = testsup::metabolic_truth();
  REQUIRE(validate_params(params, spec).empty());

  SECTION("nonpositive uniqueness") {
    params.psi[2] = 0.0;
    REQUIRE(mentions(validate_params(params, spec), "psi"));
  }
  SECTION("zero cell perturbed") {
    params.lambda(2, 0) = 1e-14;
    REQUIRE(mentions(validate_params(params, spec), "zero cell"));
  }
  SECTION("positive cell at zero") {
    params.lambda(2, 1) = 0.0;
    REQUIRE(mentions(validate_params(params, spec), "positive cell"));
  }
  SECTION("phi diagonal off one") {
    params.phi(0, 0) = 1.01;
    REQUIRE(mentions(validate_params(params, spec), "diagonal"));
  }
  SECTION("phi not positive definite") {
    params.phi(0, 1) = params.phi(1, 0) = 1.2;
    REQUIRE_FALSE(validate_params(params, spec).empty());
  }
}

TEST_CASE("free parameter count") {
  // p=8, m=2 anchors: 8 mu + 14 free loadings + 8 psi + 1 phi.
  REQUIRE(free_parameter_count(testsup::metabolic_spec()) == 31);
}
