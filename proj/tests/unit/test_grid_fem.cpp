#include <gtest/gtest.h>

#include <vector>

#include "hdsa/errors.hpp"
#include "hdsa/grid_fem.hpp"

namespace hdsa {
namespace {

TEST(StructuredMesh, NumberingIsRowMajor) {
  StructuredMesh mesh(4, 3);
  EXPECT_EQ(mesh.num_nodes(), 20);
  EXPECT_EQ(mesh.num_elements(), 12);
  EXPECT_EQ(mesh.node(2, 1), 7);
  const Point p = mesh.coords(7);
  EXPECT_DOUBLE_EQ(p.x, 0.5);
  EXPECT_DOUBLE_EQ(p.y, 1.0 / 3.0);
  EXPECT_THROW(StructuredMesh(0, 3), DomainError);
}

TEST(StructuredMesh, LeftAndRightEdgesOwnCorners) {
  StructuredMesh mesh(5, 5);
  EXPECT_EQ(mesh.edge_nodes(Boundary::kLeft).size(), 6u);
  EXPECT_EQ(mesh.dirichlet_side(mesh.node(0, 0)), DirichletSide::kLeft);
  EXPECT_EQ(mesh.dirichlet_side(mesh.node(5, 5)), DirichletSide::kRight);
  EXPECT_EQ(mesh.dirichlet_side(mesh.node(2, 0)), DirichletSide::kNone);
}

TEST(TimeGrid, StepSize) {
  TimeGrid t(0.1567, 48);
  EXPECT_DOUBLE_EQ(t.dt(), 0.1567 / 48);
  EXPECT_DOUBLE_EQ(t.time(48), 0.1567);
  EXPECT_THROW(TimeGrid(0.1, 0), DomainError);
}

TEST(Assembly, MassIntegratesExactly) {
  StructuredMesh mesh(7, 5);
  const auto M = assemble_mass(mesh);
  const Vector one = Vector::Ones(mesh.num_nodes());
  const Vector x = mesh.interpolate([](double x, double) { return x; });
  EXPECT_NEAR(one.dot(M.apply(one)), 1.0, 1e-14);
  EXPECT_NEAR(x.dot(M.apply(x)), 1.0 / 3.0, 1e-14);
  EXPECT_TRUE(M.symmetric);
  EXPECT_TRUE(M.positive_definite);
}

TEST(Assembly, StiffnessAnnihilatesConstants) {
  StructuredMesh mesh(6, 6);
  const auto K = assemble_diffusion(mesh, Vector::Ones(mesh.num_nodes()));
  EXPECT_LT(K.apply(Vector::Ones(mesh.num_nodes())).cwiseAbs().maxCoeff(), 1e-12);
  const Vector xy = mesh.interpolate([](double x, double y) { return x * y; });
  EXPECT_NEAR(xy.dot(K.apply(xy)), 2.0 / 3.0, 1e-13);
}

TEST(Assembly, DiffusionScalesWithCoefficient) {
  StructuredMesh mesh(4, 4);
  const auto K1 = assemble_diffusion(mesh, Vector::Ones(mesh.num_nodes()));
  const auto K2 = assemble_diffusion(mesh, Vector::Constant(mesh.num_nodes(), 2.0));
  EXPECT_LT((SparseMatrix(K2.matrix - 2.0 * K1.matrix)).norm(), 1e-12);
  Vector bad = Vector::Ones(mesh.num_nodes());
  bad[3] = 0.0;
  EXPECT_THROW(assemble_diffusion(mesh, bad), DomainError);
}

TEST(Assembly, AdvectionOfLinearFieldIsLoadVector) {
  // (v . grad x, w) with v = (1, 0) equals (1, w)
  StructuredMesh mesh(5, 4);
  const int n = mesh.num_nodes();
  const auto A = assemble_advection(mesh, Vector::Ones(n), Vector::Zero(n));
  const auto M = assemble_mass(mesh);
  const Vector x = mesh.interpolate([](double x, double) { return x; });
  EXPECT_LT((A.apply(x) - M.apply(Vector::Ones(n))).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(PointEvaluation, ReproducesBilinearFunctions) {
  StructuredMesh mesh(3, 5);
  auto f = [](double x, double y) { return 1.0 + 2.0 * x + 3.0 * y + 4.0 * x * y; };
  const Vector nodal = mesh.interpolate(f);
  const std::vector<Point> pts{{0.1, 0.9}, {0.5, 0.5}, {0.77, 0.13}, {1.0, 1.0}};
  const auto E = evaluate_at_points(mesh, pts);
  const Vector vals = E.apply(nodal);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(vals[i], f(pts[i].x, pts[i].y), 1e-13);
  const std::vector<Point> outside{{1.1, 0.5}};
  EXPECT_THROW(evaluate_at_points(mesh, outside), DomainError);
}

TEST(CoarseBasis, PartitionOfUnity) {
  StructuredMesh mesh(12, 12);
  CoarseBasis basis(mesh, 3, 3);
  EXPECT_EQ(basis.size(), 16);
  const Vector u = basis.prolong(Vector::Ones(basis.size()));
  EXPECT_LT((u - Vector::Ones(mesh.num_nodes())).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(basis.prolong(Vector::Ones(3)), DomainError);
}

TEST(Hat1d, PartitionOfUnity) {
  for (double y : {0.0, 0.123, 0.5, 0.987, 1.0}) {
    double sum = 0.0;
    for (int i = 0; i < 21; ++i) sum += hat_1d(i, 21, y);
    EXPECT_NEAR(sum, 1.0, 1e-14);
  }
  EXPECT_NEAR(hat_1d(3, 21, 0.15), 1.0, 1e-14);
}

}  // namespace
}  // namespace hdsa
