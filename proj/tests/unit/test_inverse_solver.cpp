#include <gtest/gtest.h>

#include <random>

#include <Eigen/Cholesky>

#include "hdsa/errors.hpp"
#include "hdsa/experiment.hpp"
#include "hdsa/inverse_solver.hpp"

namespace hdsa {
namespace {

TrustRegionFunctions quadratic(const Matrix& A, const Vector& b) {
  TrustRegionFunctions f;
  f.evaluate = [A, b](const Vector& x) {
    TrustRegionPoint p;
    p.value = 0.5 * x.dot(A * x) - b.dot(x);
    p.gradient = A * x - b;
    p.hess_vec = [A](const Vector& v, HessianMode) { return Vector(A * v); };
    return p;
  };
  f.precondition = [](const Vector& r) { return r; };
  f.metric = [](const Vector& s) { return s; };
  return f;
}

TEST(TrustRegion, ConvexQuadraticReachesAnalyticMinimizer) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  const int n = 20;
  Matrix L(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) L(i, j) = normal(rng);
  const Matrix A = L * L.transpose() / n + 0.5 * Matrix::Identity(n, n);
  Vector b(n);
  for (int i = 0; i < n; ++i) b[i] = normal(rng);
  const Vector exact = A.llt().solve(b);

  OptimizerConfig cfg;
  cfg.gradient_rtol = 1e-12;
  cfg.initial_radius = 0.1;
  const auto r = minimize_trust_region(quadratic(A, b), Vector::Zero(n), cfg);
  ASSERT_TRUE(r.converged) << r.message;
  EXPECT_LT((r.x - exact).norm(), 1e-8 * exact.norm());

  double last = 0.0;
  for (const auto& e : r.log) {
    if (!e.accepted) continue;
    EXPECT_LE(e.objective, last + 1e-14);
    last = e.objective;
  }
}

TEST(TrustRegion, SmallRadiusProducesBoundarySteps) {
  const int n = 5;
  const Matrix A = Matrix::Identity(n, n);
  const Vector b = Vector::Constant(n, 10.0);
  OptimizerConfig cfg;
  cfg.initial_radius = 1e-2;
  cfg.max_iterations = 1;
  const auto r = minimize_trust_region(quadratic(A, b), Vector::Zero(n), cfg);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_NEAR(r.log[0].step_norm, 1e-2, 1e-12);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.message, "maximum iterations reached");
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gradient_rtol = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.cg_rtol = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_radius = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

class ModelInversion : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    mp = new ModelProblem(make_model_problem(15, 8));
    OptimizerConfig cfg;
    cfg.gradient_rtol = 1e-8;
    cfg.max_iterations = 200;
    ref = reference_gradient_norm(*mp->problem, mp->theta);
    result = new TrustRegionResult(
        solve_inverse(*mp->problem, mp->theta, Vector::Zero(mp->problem->inversion_dim()), cfg, ref));
  }
  static void TearDownTestSuite() {
    delete result;
    delete mp;
  }

  static ModelProblem* mp;
  static TrustRegionResult* result;
  static double ref;
};

ModelProblem* ModelInversion::mp = nullptr;
TrustRegionResult* ModelInversion::result = nullptr;
double ModelInversion::ref = 0.0;

TEST_F(ModelInversion, ConvergesWithMonotoneObjective) {
  ASSERT_TRUE(result->converged) << result->message;
  EXPECT_LT(result->relative_gradient, 1e-8);
  double last = std::numeric_limits<double>::infinity();
  for (const auto& e : result->log) {
    EXPECT_LE(e.objective, last);
    if (e.accepted) last = e.objective;
  }
}

TEST_F(ModelInversion, CertificateAtSolutionAndAtZero) {
  const auto& p = *mp->problem;
  const auto at_solution = check_stationarity(p, result->x, mp->theta, ref);
  EXPECT_TRUE(at_solution.valid());
  EXPECT_LT(at_solution.relative_gradient, 1e-6);
  const auto at_zero = check_stationarity(p, Vector::Zero(p.inversion_dim()), mp->theta, ref);
  EXPECT_FALSE(at_zero.stationary());
  EXPECT_NEAR(at_zero.relative_gradient, 1.0, 1e-12);
}

TEST_F(ModelInversion, RestartFromSolutionStopsImmediately) {
  OptimizerConfig cfg;
  const auto again = solve_inverse(*mp->problem, mp->theta, result->x, cfg);
  EXPECT_TRUE(again.converged);
  EXPECT_LE(again.iterations, 1);
}

TEST_F(ModelInversion, ReducesErrorAgainstNoiseFreeTruth) {
  const auto& p = *mp->problem;
  EXPECT_LT(p.mass_norm(result->x - mp->truth), 0.5 * p.mass_norm(mp->truth));
}

TEST(Stationarity, GaussNewtonProbeSeesPositiveCurvature) {
  auto mp = make_model_problem(15, 8);
  const auto& p = *mp.problem;
  const double ref = reference_gradient_norm(p, mp.theta);
  const auto c = check_stationarity(p, Vector::Zero(p.inversion_dim()), mp.theta, ref, 1e-6,
                                    HessianMode::kGaussNewton, 5);
  EXPECT_TRUE(c.positive_curvature());
  EXPECT_EQ(c.probe_iterations, 5);
}

}  // namespace
}  // namespace hdsa
