#include "hdsa/grid_fem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hdsa/errors.hpp"

namespace hdsa {

StructuredMesh::StructuredMesh(int nx, int ny) : nx_(nx), ny_(ny) {
  if (nx < 1 || ny < 1) {
    throw DomainError("mesh needs at least one cell per axis, got " + std::to_string(nx) + "x" +
                      std::to_string(ny));
  }
}

Point StructuredMesh::coords(int node) const {
  const int i = node % (nx_ + 1);
  const int j = node / (nx_ + 1);
  return {static_cast<double>(i) / nx_, static_cast<double>(j) / ny_};
}

std::array<int, 4> StructuredMesh::element_nodes(int element) const {
  const int i = element % nx_;
  const int j = element / nx_;
  return {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
}

std::vector<int> StructuredMesh::edge_nodes(Boundary b) const {
  std::vector<int> out;
  switch (b) {
    case Boundary::kBottom:
      for (int i = 0; i <= nx_; ++i) out.push_back(node(i, 0));
      break;
    case Boundary::kTop:
      for (int i = 0; i <= nx_; ++i) out.push_back(node(i, ny_));
      break;
    case Boundary::kLeft:
      for (int j = 0; j <= ny_; ++j) out.push_back(node(0, j));
      break;
    case Boundary::kRight:
      for (int j = 0; j <= ny_; ++j) out.push_back(node(nx_, j));
      break;
  }
  return out;
}

DirichletSide StructuredMesh::dirichlet_side(int node) const {
  const int i = node % (nx_ + 1);
  if (i == 0) return DirichletSide::kLeft;
  if (i == nx_) return DirichletSide::kRight;
  return DirichletSide::kNone;
}

TimeGrid::TimeGrid(double t, int n) : final_time(t), steps(n) {
  if (!(t > 0.0) || n < 1) {
    throw DomainError("time grid needs T > 0 and at least one step");
  }
}

QuadratureTable::QuadratureTable(const StructuredMesh& mesh) {
  const double hx = mesh.hx();
  const double hy = mesh.hy();
  const double g = 0.5 / std::sqrt(3.0);
  const std::array<double, 2> gauss = {0.5 - g, 0.5 + g};
  // Reference node order matches element_nodes: (0,0) (1,0) (1,1) (0,1).
  const std::array<int, 4> xi_of = {0, 1, 1, 0};
  const std::array<int, 4> eta_of = {0, 0, 1, 1};
  int q = 0;
  for (int b = 0; b < 2; ++b) {
    for (int a = 0; a < 2; ++a, ++q) {
      const double s = gauss[a];
      const double t = gauss[b];
      local[q] = {s * hx, t * hy};
      for (int n = 0; n < kNodes; ++n) {
        const double fx = xi_of[n] ? s : 1.0 - s;
        const double fy = eta_of[n] ? t : 1.0 - t;
        const double dfx = xi_of[n] ? 1.0 : -1.0;
        const double dfy = eta_of[n] ? 1.0 : -1.0;
        shape[q][n] = fx * fy;
        dshape_dx[q][n] = dfx * fy / hx;
        dshape_dy[q][n] = fx * dfy / hy;
      }
    }
  }
  weight = 0.25 * hx * hy;
}

namespace {

template <typename Kernel>
SparseMatrix assemble(const StructuredMesh& mesh, Kernel&& kernel) {
  const QuadratureTable quad(mesh);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.num_elements()) * 16);
  std::array<std::array<double, 4>, 4> local{};
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (auto& row : local) row.fill(0.0);
    kernel(e, nodes, quad, local);
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        if (local[a][b] != 0.0) triplets.emplace_back(nodes[a], nodes[b], local[a][b]);
      }
    }
  }
  SparseMatrix out(mesh.num_nodes(), mesh.num_nodes());
  out.setFromTriplets(triplets.begin(), triplets.end());
  out.makeCompressed();
  return out;
}

void check_nodal(const StructuredMesh& mesh, const Vector& v, const char* what) {
  if (v.size() != mesh.num_nodes()) {
    throw DomainError(std::string(what) + ": expected " + std::to_string(mesh.num_nodes()) +
                      " nodal values, got " + std::to_string(v.size()));
  }
}

}  // namespace

LinearOperator assemble_mass(const StructuredMesh& mesh) {
  LinearOperator op;
  op.matrix = assemble(mesh, [](int, const auto&, const QuadratureTable& quad, auto& local) {
    for (int q = 0; q < QuadratureTable::kPoints; ++q) {
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) local[a][b] += quad.weight * quad.shape[q][a] * quad.shape[q][b];
      }
    }
  });
  op.symmetric = true;
  op.positive_definite = true;
  return op;
}

LinearOperator assemble_diffusion(const StructuredMesh& mesh, const Vector& coeff) {
  check_nodal(mesh, coeff, "assemble_diffusion");
  for (Eigen::Index n = 0; n < coeff.size(); ++n) {
    if (!(coeff[n] > 0.0)) {
      throw DomainError("assemble_diffusion: coefficient must be strictly positive (node " +
                        std::to_string(n) + " has " + std::to_string(coeff[n]) + ")");
    }
  }
  LinearOperator op;
  op.matrix = assemble(mesh, [&](int, const auto& nodes, const QuadratureTable& quad, auto& local) {
    for (int q = 0; q < QuadratureTable::kPoints; ++q) {
      double k = 0.0;
      for (int a = 0; a < 4; ++a) k += quad.shape[q][a] * coeff[nodes[a]];
      const double w = quad.weight * k;
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          local[a][b] += w * (quad.dshape_dx[q][a] * quad.dshape_dx[q][b] +
                              quad.dshape_dy[q][a] * quad.dshape_dy[q][b]);
        }
      }
    }
  });
  op.symmetric = true;
  return op;
}

LinearOperator assemble_advection(const StructuredMesh& mesh, const QuadVelocity& velocity) {
  const auto expected = static_cast<std::size_t>(mesh.num_elements()) * QuadratureTable::kPoints;
  if (velocity.vx.size() != expected || velocity.vy.size() != expected) {
    throw DomainError("assemble_advection: quadrature velocity has wrong size");
  }
  LinearOperator op;
  op.matrix = assemble(mesh, [&](int e, const auto&, const QuadratureTable& quad, auto& local) {
    for (int q = 0; q < QuadratureTable::kPoints; ++q) {
      const std::size_t k = static_cast<std::size_t>(e) * QuadratureTable::kPoints + q;
      const double vx = velocity.vx[k];
      const double vy = velocity.vy[k];
      if (vx == 0.0 && vy == 0.0) continue;
      for (int a = 0; a < 4; ++a) {
        const double w = quad.weight * quad.shape[q][a];
        for (int b = 0; b < 4; ++b) {
          local[a][b] += w * (vx * quad.dshape_dx[q][b] + vy * quad.dshape_dy[q][b]);
        }
      }
    }
  });
  return op;
}

LinearOperator assemble_advection(const StructuredMesh& mesh, const Vector& vx, const Vector& vy) {
  check_nodal(mesh, vx, "assemble_advection");
  check_nodal(mesh, vy, "assemble_advection");
  const QuadratureTable quad(mesh);
  QuadVelocity qv;
  const auto count = static_cast<std::size_t>(mesh.num_elements()) * QuadratureTable::kPoints;
  qv.vx.assign(count, 0.0);
  qv.vy.assign(count, 0.0);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < QuadratureTable::kPoints; ++q) {
      const std::size_t k = static_cast<std::size_t>(e) * QuadratureTable::kPoints + q;
      for (int a = 0; a < 4; ++a) {
        qv.vx[k] += quad.shape[q][a] * vx[nodes[a]];
        qv.vy[k] += quad.shape[q][a] * vy[nodes[a]];
      }
    }
  }
  return assemble_advection(mesh, qv);
}

LinearOperator evaluate_at_points(const StructuredMesh& mesh, std::span<const Point> points) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(points.size() * 4);
  for (std::size_t r = 0; r < points.size(); ++r) {
    const Point p = points[r];
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
      throw DomainError("evaluate_at_points: point (" + std::to_string(p.x) + ", " +
                        std::to_string(p.y) + ") lies outside the unit square");
    }
    const int i = std::min(static_cast<int>(std::floor(p.x * mesh.nx())), mesh.nx() - 1);
    const int j = std::min(static_cast<int>(std::floor(p.y * mesh.ny())), mesh.ny() - 1);
    const double s = p.x * mesh.nx() - i;
    const double t = p.y * mesh.ny() - j;
    const std::array<double, 4> w = {(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t};
    const std::array<int, 4> nodes = {mesh.node(i, j), mesh.node(i + 1, j), mesh.node(i + 1, j + 1),
                                      mesh.node(i, j + 1)};
    for (int a = 0; a < 4; ++a) {
      if (w[a] != 0.0) triplets.emplace_back(static_cast<int>(r), nodes[a], w[a]);
    }
  }
  LinearOperator op;
  op.matrix.resize(static_cast<Eigen::Index>(points.size()), mesh.num_nodes());
  op.matrix.setFromTriplets(triplets.begin(), triplets.end());
  op.matrix.makeCompressed();
  return op;
}

CoarseBasis::CoarseBasis(const StructuredMesh& fine, int cx, int cy)
    : CoarseBasis(fine, cx, cy, {0.0, 0.0}, {1.0, 1.0}) {}

CoarseBasis::CoarseBasis(const StructuredMesh& fine, int cx, int cy, Point lower, Point upper)
    : cx_(cx), cy_(cy), lower_(lower), upper_(upper) {
  if (cx < 1 || cy < 1 || !(upper.x > lower.x) || !(upper.y > lower.y)) {
    throw DomainError("CoarseBasis: invalid coarse grid");
  }
  const double hx = (upper.x - lower.x) / cx;
  const double hy = (upper.y - lower.y) / cy;
  constexpr double kEps = 1e-12;
  std::vector<Eigen::Triplet<double>> triplets;
  for (int n = 0; n < fine.num_nodes(); ++n) {
    const Point p = fine.coords(n);
    if (p.x < lower.x - kEps || p.x > upper.x + kEps || p.y < lower.y - kEps || p.y > upper.y + kEps) {
      continue;
    }
    const double sx = std::clamp((p.x - lower.x) / hx, 0.0, static_cast<double>(cx));
    const double sy = std::clamp((p.y - lower.y) / hy, 0.0, static_cast<double>(cy));
    const int i = std::min(static_cast<int>(std::floor(sx)), cx - 1);
    const int j = std::min(static_cast<int>(std::floor(sy)), cy - 1);
    const double s = sx - i;
    const double t = sy - j;
    const std::array<double, 4> w = {(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t};
    const std::array<int, 4> k = {j * (cx + 1) + i, j * (cx + 1) + i + 1, (j + 1) * (cx + 1) + i + 1,
                                  (j + 1) * (cx + 1) + i};
    for (int a = 0; a < 4; ++a) {
      if (w[a] > kEps) triplets.emplace_back(n, k[a], w[a]);
    }
  }
  prolongation_.resize(fine.num_nodes(), size());
  prolongation_.setFromTriplets(triplets.begin(), triplets.end());
  prolongation_.makeCompressed();
}

Point CoarseBasis::coarse_node(int k) const {
  const int i = k % (cx_ + 1);
  const int j = k / (cx_ + 1);
  return {lower_.x + (upper_.x - lower_.x) * i / cx_, lower_.y + (upper_.y - lower_.y) * j / cy_};
}

Vector CoarseBasis::prolong(const Vector& coarse_coeffs) const {
  if (coarse_coeffs.size() != size()) {
    throw DomainError("prolong: expected " + std::to_string(size()) + " coarse coefficients, got " +
                      std::to_string(coarse_coeffs.size()));
  }
  return prolongation_ * coarse_coeffs;
}

double hat_1d(int index, int count, double y) {
  const double h = 1.0 / (count - 1);
  const double r = std::abs(y - index * h) / h;
  return r < 1.0 ? 1.0 - r : 0.0;
}

}  // namespace hdsa
