#include <gtest/gtest.h>

#include <random>

#include "hdsa/errors.hpp"
#include "hdsa/linear_oracle.hpp"

namespace hdsa {
namespace {

TEST(LinearOracle, MinimizerSatisfiesNormalEquations) {
  std::mt19937_64 rng(1);
  const auto p = random_linear_problem(rng, 25, 15);
  const Vector m = solve_linear(p);
  const Vector residual = p.hessian() * m - p.A.transpose() * p.weights().cwiseProduct(p.y_nominal);
  EXPECT_LT(residual.norm(), 1e-9 * (p.A.transpose() * p.weights().cwiseProduct(p.y_nominal)).norm());
}

TEST(LinearOracle, SensitivityMatchesBruteForceDifferences) {
  // m* is affine in theta, so differences are exact up to round-off
  std::mt19937_64 rng(2);
  const auto p = random_linear_problem(rng, 12, 9);
  const Matrix D = dense_D(p);
  const Vector m0 = solve_linear(p);
  for (int i = 0; i < p.data_size(); ++i) {
    const Vector col = solve_linear(p, Vector::Unit(p.data_size(), i)) - m0;
    EXPECT_LT((col - D.col(i)).norm(), 1e-8 * std::max(1.0, col.norm()));
  }
}

TEST(LinearOracle, TraceIdentityOnRandomProblems) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k) {
    const auto p = random_linear_problem(rng, 5 + 3 * k, 60 - 4 * k);
    const auto c = verify_prop1(p);
    EXPECT_GT(c.trace, 0.0);
    EXPECT_LT(c.gap, 1e-10);
  }
}

TEST(LinearOracle, TraceMatchesSampledCovariance) {
  // Monte Carlo oracle for Tr(Cov(m*)) with theta ~ N(0, Sigma)
  std::mt19937_64 rng(4);
  const auto p = random_linear_problem(rng, 8, 5);
  const auto c = verify_prop1(p);
  std::normal_distribution<double> normal;
  const Vector m0 = solve_linear(p);
  const int samples = 20000;
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vector theta(p.data_size());
    for (int i = 0; i < theta.size(); ++i) theta[i] = p.sigma[i] * normal(rng);
    acc += (solve_linear(p, theta) - m0).squaredNorm();
  }
  EXPECT_NEAR(acc / samples / c.trace, 1.0, 0.05);
}

TEST(LinearOracle, ConditionGuard) {
  std::mt19937_64 rng(5);
  const auto p = random_linear_problem(rng, 10, 30, 1e6);
  EXPECT_LE(condition_number(p.hessian()), 1e6);
  EXPECT_NEAR(condition_number(Vector::LinSpaced(4, 1.0, 4.0).asDiagonal().toDenseMatrix()), 4.0, 1e-12);
}

TEST(LinearOracle, Validation) {
  std::mt19937_64 rng(6);
  auto p = random_linear_problem(rng, 6, 4);
  p.sigma[0] = 0.0;
  EXPECT_THROW(p.validate(), DomainError);
  p = random_linear_problem(rng, 6, 4);
  p.alpha = -1.0;
  EXPECT_THROW(p.validate(), DomainError);
  p = random_linear_problem(rng, 6, 4);
  p.R(0, 1) += 1.0;
  EXPECT_THROW(p.validate(), DomainError);
  EXPECT_THROW(solve_linear(random_linear_problem(rng, 6, 4), Vector::Zero(2)), DomainError);
}

}  // namespace
}  // namespace hdsa
