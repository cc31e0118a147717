#include <gtest/gtest.h>

#include <cmath>

#include "hdsa/errors.hpp"
#include "hdsa/forward_model.hpp"

namespace hdsa {
namespace {

ModelConfig constant_bcs(double left, double right) {
  ModelConfig c;
  c.pressure_left = [left](double) { return left; };
  c.pressure_right = [right](double) { return right; };
  return c;
}

ForwardModel make_model(int n, int steps, ModelConfig config = {}) {
  return ForwardModel(StructuredMesh(n, n), TimeGrid(config.final_time, steps), config,
                      SensorLayout::standard(steps, 1));
}

bool interior(const StructuredMesh& mesh, int node) {
  const Point p = mesh.coords(node);
  return p.x > 1e-12 && p.x < 1.0 - 1e-12 && p.y > 1e-12 && p.y < 1.0 - 1e-12;
}

TEST(ModelConfig, NominalBoundaryProfiles) {
  EXPECT_DOUBLE_EQ(nominal_pressure_right(0.0), 16.5);
  EXPECT_DOUBLE_EQ(nominal_pressure_left(0.0), 12.0);
  EXPECT_EQ(default_wells().size(), 16u);
  ModelConfig bad;
  bad.diffusivity = 0.0;
  EXPECT_THROW(bad.validate(), DomainError);
}

TEST(SensorLayout, DataSize) {
  const auto s = SensorLayout::standard(48, 1);
  EXPECT_EQ(s.num_pressure(), 35);
  EXPECT_EQ(s.num_concentration(), 49);
  EXPECT_EQ(s.data_size(), 2387);
  EXPECT_EQ(s.concentration_index(2, 5), 35 + 2 * 48 + 5);
  EXPECT_THROW(SensorLayout::standard(10, 3), DomainError);
}

TEST(Pressure, LinearProfileForConstantData) {
  const auto model = make_model(8, 2, constant_bcs(10.0, 16.0));
  const auto& mesh = model.mesh();
  const auto aux = AuxiliaryParams::nominal(model.config());
  const Vector m = Vector::Zero(mesh.num_nodes());
  const Vector p = model.solve_pressure(m, aux);
  const Vector exact = mesh.interpolate([](double x, double) { return 10.0 + 6.0 * x; });
  EXPECT_LT((p - exact).cwiseAbs().maxCoeff(), 1e-10);

  auto [vx, vy] = model.darcy_velocity(m, p);
  auto [wx, wy] = model.darcy_velocity(Vector::Constant(mesh.num_nodes(), std::log(2.0)), p);
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    if (!interior(mesh, i)) continue;
    EXPECT_NEAR(vx[i], -6.0, 1e-8);
    EXPECT_NEAR(vy[i], 0.0, 1e-8);
    EXPECT_NEAR(wx[i], -12.0, 1e-8);
  }
}

TEST(Pressure, ConstantPressureHasNoVelocity) {
  const auto model = make_model(6, 2, constant_bcs(12.0, 12.0));
  const Vector m = Vector::Zero(model.mesh().num_nodes());
  const Vector p = model.solve_pressure(m, AuxiliaryParams::nominal(model.config()));
  auto [vx, vy] = model.darcy_velocity(m, p);
  EXPECT_LT(vx.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(vy.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pressure, SecondOrderConvergenceAtSensors) {
  Vector obs[3];
  int k = 0;
  for (int n : {32, 64, 128}) {
    const auto model = make_model(n, 1);
    const auto aux = AuxiliaryParams::nominal(model.config());
    const Vector p = model.solve_pressure(Vector::Zero(model.mesh().num_nodes()), aux);
    obs[k++] = model.pressure_observer() * p;
  }
  const double ratio = (obs[0] - obs[1]).norm() / (obs[1] - obs[2]).norm();
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(Transport, ZeroSourceGivesZeroConcentration) {
  ModelConfig c;
  c.source_amplitude = 0.0;
  const auto model = make_model(8, 4, c);
  const auto sol = model.solve(Vector::Zero(model.mesh().num_nodes()), AuxiliaryParams::nominal(c));
  ASSERT_EQ(sol.concentration.size(), 5u);
  for (const auto& snap : sol.concentration) EXPECT_EQ(snap.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Transport, MassBalanceWithoutFlow) {
  const auto model = make_model(10, 6, constant_bcs(12.0, 12.0));
  const auto aux = AuxiliaryParams::nominal(model.config());
  const auto sol = model.solve(Vector::Zero(model.mesh().num_nodes()), aux);
  const Vector one = Vector::Ones(model.mesh().num_nodes());
  const double load = one.dot(model.mass().apply(model.source(aux)));
  const double dt = model.time().dt();
  EXPECT_EQ(sol.concentration[0].cwiseAbs().maxCoeff(), 0.0);
  for (int j = 1; j <= 6; ++j) {
    const double total = one.dot(model.mass().apply(sol.concentration[j]));
    EXPECT_NEAR(total / (dt * j * load), 1.0, 1e-8);
  }
}

TEST(Transport, MassGrowsBeforeOutflow) {
  const auto model = make_model(16, 6);
  const auto sol = model.solve(Vector::Zero(model.mesh().num_nodes()), AuxiliaryParams::nominal(model.config()));
  const Vector one = Vector::Ones(model.mesh().num_nodes());
  double prev = 0.0;
  for (int j = 1; j <= 3; ++j) {
    const double total = one.dot(model.mass().apply(sol.concentration[j]));
    EXPECT_GT(total, prev);
    prev = total;
  }
}

TEST(Transport, LinearInSourceAmplitude) {
  ModelConfig c1, c2;
  c2.source_amplitude = 2.0 * c1.source_amplitude;
  const auto m1 = make_model(10, 4, c1);
  const auto m2 = make_model(10, 4, c2);
  const Vector m = m1.mesh().interpolate([](double x, double y) { return 0.2 * std::sin(3 * x) * y; });
  const Vector y1 = m1.predict_observations(m, AuxiliaryParams::nominal(c1));
  const Vector y2 = m2.predict_observations(m, AuxiliaryParams::nominal(c2));
  const int np = m1.sensors().num_pressure();
  const Vector c1v = y1.tail(y1.size() - np), c2v = y2.tail(y2.size() - np);
  EXPECT_LT((c2v - 2.0 * c1v).norm() / c2v.norm(), 1e-10);
  EXPECT_EQ(y1.head(np), y2.head(np));
}

TEST(Observations, NominalAuxIsReproducible) {
  const auto model = make_model(8, 4);
  const Vector m = Vector::Zero(model.mesh().num_nodes());
  const Vector a = model.predict_observations(m, AuxiliaryParams::nominal(model.config()));
  const Vector b = model.predict_observations(m, AuxiliaryParams::nominal(model.config()));
  EXPECT_EQ(a.size(), model.sensors().data_size());
  EXPECT_TRUE(a == b);
}

TEST(Observations, AuxiliaryPerturbationsChangeData) {
  const auto model = make_model(8, 4);
  const Vector m = Vector::Zero(model.mesh().num_nodes());
  const auto nominal = AuxiliaryParams::nominal(model.config());
  const Vector y0 = model.predict_observations(m, nominal);
  auto aux = nominal;
  aux.bc_left[10] = 1.0;
  const Vector y1 = model.predict_observations(m, aux);
  EXPECT_GT((y1 - y0).norm(), 1e-6);
  aux = nominal;
  aux.source.resize(3);
  EXPECT_THROW(model.predict_observations(m, aux), DomainError);
}

}  // namespace
}  // namespace hdsa
