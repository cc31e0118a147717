#include <gtest/gtest.h>

#include <random>

#include "hdsa/errors.hpp"
#include "hdsa/experiment.hpp"
#include "hdsa/inverse_problem.hpp"

namespace hdsa {
namespace {

Vector randn(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * normal(rng);
  return v;
}

class InverseProblemTest : public ::testing::Test {
 protected:
  void SetUp() override {
    mp = make_model_problem(15, 8);
    std::mt19937_64 rng(7);
    CoarseBasis basis(mp.model->mesh(), 3, 3);
    m = basis.prolong(randn(rng, basis.size(), 0.2));
    theta = randn(rng, mp.problem->params().size(), 0.2);
  }

  ModelProblem mp;
  Vector m, theta;
};

TEST_F(InverseProblemTest, BlockLayout) {
  const auto& params = mp.problem->params();
  ASSERT_EQ(params.num_blocks(), 6);
  const char* names[] = {"pressure_data", "concentration_data", "source", "diffusion", "bc_left", "bc_right"};
  const int sizes[] = {35, 49 * 8, 144, 1, 21, 21};
  for (int k = 0; k < 6; ++k) {
    EXPECT_EQ(params.block(k).name, names[k]);
    EXPECT_EQ(params.block(k).size, sizes[k]);
  }
  EXPECT_EQ(params.num_experimental(), 2);
  EXPECT_DOUBLE_EQ(params.block(0).scale, 0.05);
  EXPECT_DOUBLE_EQ(params.block(2).scale, 0.2);
}

TEST_F(InverseProblemTest, WeightsUseBlockMeans) {
  const auto& p = *mp.problem;
  const int np = p.model().sensors().num_pressure();
  const Vector& y = p.observed();
  const double pbar = y.head(np).mean();
  const double cbar = y.tail(y.size() - np).mean();
  EXPECT_NEAR(p.pressure_mean(), pbar, 1e-12 * pbar);
  EXPECT_NEAR(p.weights()[0], 1.0 / (pbar * pbar * 0.03 * 0.03), 1e-9 * p.weights()[0]);
  EXPECT_NEAR(p.weights()[np], 1.0 / (cbar * cbar * 0.03 * 0.03), 1e-9 * p.weights()[np]);
}

TEST_F(InverseProblemTest, DataPerturbation) {
  const auto& p = *mp.problem;
  const Vector y = p.data(theta);
  const int ne = p.params().block(0).size + p.params().block(1).size;
  for (int i = 0; i < ne; i += 17) EXPECT_NEAR(y[i], p.observed()[i] * (1.0 + 0.05 * theta[i]), 1e-12);
}

TEST(InverseProblem, ZeroMisfitAtConstantField) {
  auto mp = make_model_problem(15, 8);
  const Vector m = Vector::Constant(mp.model->mesh().num_nodes(), -0.3);
  const Vector data = mp.model->predict_observations(m, AuxiliaryParams::nominal(mp.model->config()));
  InverseProblem p(mp.model, ObjectiveSpec{}, data);
  EXPECT_LT(p.objective(m, p.params().zero()), 1e-12);
}

TEST(InverseProblem, MisfitIsQuadraticInResidual) {
  auto mp = make_model_problem(15, 8);
  const Vector m = Vector::Zero(mp.model->mesh().num_nodes());
  const Vector q = mp.model->predict_observations(m, AuxiliaryParams::nominal(mp.model->config()));
  // paired +/- residuals keep the block means, hence the weights, fixed
  const int np = mp.model->sensors().num_pressure();
  Vector r = Vector::Zero(q.size());
  for (auto [begin, end] : {std::pair<int, int>{0, np}, {np, static_cast<int>(q.size())}}) {
    for (int i = begin; i + 1 < end; i += 2) {
      r[i] = 1e-3 * q[i];
      r[i + 1] = -r[i];
    }
  }
  InverseProblem p1(mp.model, ObjectiveSpec{}, Vector(q - r));
  InverseProblem p2(mp.model, ObjectiveSpec{}, Vector(q - 2.0 * r));
  const Vector zero = p1.params().zero();
  const double j1 = p1.linearize(m, zero).misfit();
  const double j2 = p2.linearize(m, zero).misfit();
  EXPECT_NEAR(j1, 0.5 * (p1.weights().array() * r.array().square()).sum(), 1e-10 * j1);
  EXPECT_NEAR(j2 / j1, 4.0, 1e-6);
}

TEST(InverseProblem, GradientVanishesAtNoiseFreeTruth) {
  auto mp = make_model_problem(15, 8, 0.0);
  const Vector g = mp.problem->gradient(mp.truth, mp.theta);
  EXPECT_LT(g.norm(), 1e-10);
}

TEST(InverseProblem, RegularizationGradientIsStiffnessAction) {
  auto mp = make_model_problem(15, 8);
  std::mt19937_64 rng(3);
  CoarseBasis basis(mp.model->mesh(), 3, 3);
  const Vector m = basis.prolong(randn(rng, basis.size()));
  const Vector g = mp.problem->regularization_gradient(m);
  const Vector expected = 3e-2 * mp.model->stiffness().apply(m);
  EXPECT_LT((g - expected).norm(), 1e-13 * expected.norm());
  EXPECT_NEAR(mp.problem->regularization(m), 0.5 * m.dot(expected), 1e-12);
}

TEST_F(InverseProblemTest, GradientMatchesCentralDifferences) {
  const auto& p = *mp.problem;
  const auto lin = p.linearize(m, theta);
  std::mt19937_64 rng(11);
  for (int d = 0; d < 3; ++d) {
    const Vector dm = randn(rng, p.inversion_dim());
    const double h = 1e-5;
    const double fd = (p.objective(m + h * dm, theta) - p.objective(m - h * dm, theta)) / (2 * h);
    EXPECT_NEAR(lin.gradient().dot(dm), fd, 1e-5 * std::abs(fd));
  }
  const Vector dt = randn(rng, p.params().size());
  const double h = 1e-6;
  const double fd = (p.objective(m, theta + h * dt) - p.objective(m, theta - h * dt)) / (2 * h);
  EXPECT_NEAR(lin.gradient_theta().dot(dt), fd, 1e-5 * std::abs(fd));
}

TEST_F(InverseProblemTest, HessianActions) {
  const auto& p = *mp.problem;
  const auto lin = p.linearize(m, theta);
  std::mt19937_64 rng(5);
  EXPECT_EQ(lin.hess_vec(Vector::Zero(p.inversion_dim())).norm(), 0.0);
  for (int d = 0; d < 3; ++d) {
    const Vector x = randn(rng, p.inversion_dim());
    const Vector y = randn(rng, p.inversion_dim());
    const Vector hx = lin.hess_vec(x);
    const double h = 1e-5;
    const Vector fd = (p.gradient(m + h * x, theta) - p.gradient(m - h * x, theta)) / (2 * h);
    EXPECT_LT((hx - fd).norm(), 1e-4 * fd.norm());
    const double a = hx.dot(y), b = x.dot(lin.hess_vec(y));
    EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
    const Vector gx = lin.hess_vec(x, HessianMode::kGaussNewton);
    EXPECT_NEAR(gx.dot(y), x.dot(lin.hess_vec(y, HessianMode::kGaussNewton)), 1e-10 * std::abs(gx.dot(y)));
    EXPECT_GE(x.dot(gx), -1e-12);
  }
}

TEST_F(InverseProblemTest, MixedDerivative) {
  const auto& p = *mp.problem;
  const auto lin = p.linearize(m, theta);
  std::mt19937_64 rng(9);
  for (int k = 0; k < p.params().num_blocks(); ++k) {
    const Vector dt = p.params().extend(randn(rng, p.params().block(k).size), k);
    const Vector dm = randn(rng, p.inversion_dim());
    const Vector b = lin.apply_B(dt);
    auto central = [&](double h) {
      return Vector((p.gradient(m, theta + h * dt) - p.gradient(m, theta - h * dt)) / (2 * h));
    };
    // the gradient is affine in the data perturbations, so those blocks take a unit step
    const double h = p.params().block(k).kind == BlockKind::kExperimental ? 1.0 : 1e-4;
    const Vector fd = (4.0 * central(0.5 * h) - central(h)) / 3.0;
    EXPECT_LT((b - fd).norm(), 1e-5 * fd.norm()) << p.params().block(k).name;
    EXPECT_NEAR(b.dot(dm), lin.apply_Bt(dm).dot(dt), 1e-10 * std::abs(b.dot(dm)));
  }
}

TEST_F(InverseProblemTest, SolveCounters) {
  const auto& p = *mp.problem;
  auto& c = p.counters();
  c.reset();
  const auto lin = p.linearize(m, theta);
  EXPECT_EQ(c.forward_solves.load(), 1);
  EXPECT_EQ(c.adjoint_solves.load(), 1);
  lin.hess_vec(Vector::Ones(p.inversion_dim()));
  EXPECT_EQ(c.linearized_solves(), 2);
  lin.apply_B(Vector::Ones(p.params().size()));
  EXPECT_EQ(c.linearized_solves(), 4);
  lin.apply_Bt(Vector::Ones(p.inversion_dim()));
  EXPECT_EQ(c.linearized_solves(), 6);
}

TEST_F(InverseProblemTest, InjectedFaultBreaksGradient) {
  auto& p = *mp.problem;
  p.inject_fault(AdjointFault::kFlipTransportCoupling);
  const auto lin = p.linearize(m, theta);
  std::mt19937_64 rng(13);
  const Vector dm = randn(rng, p.inversion_dim());
  const double h = 1e-5;
  const double fd = (p.objective(m + h * dm, theta) - p.objective(m - h * dm, theta)) / (2 * h);
  EXPECT_GT(std::abs(lin.gradient().dot(dm) - fd), 1e-3 * std::abs(fd));
}

TEST(InverseProblem, RejectsBadInput) {
  auto mp = make_model_problem(15, 8);
  EXPECT_THROW(InverseProblem(mp.model, ObjectiveSpec{}, Vector::Ones(3)), DomainError);
  ObjectiveSpec bad;
  bad.sigma = 0.0;
  EXPECT_THROW(InverseProblem(mp.model, bad, mp.problem->observed()), DomainError);
  EXPECT_THROW(mp.problem->objective(Vector::Zero(3), mp.theta), DomainError);
}

}  // namespace
}  // namespace hdsa
