#pragma once

// Bilinear (Q1) finite elements on a uniform structured grid of the unit
// square. Nodes are numbered row by row: node(i, j) = j * (nx + 1) + i.

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace hdsa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Γ0 bottom, Γ1 right, Γ2 top, Γ3 left.
enum class Boundary { kBottom = 0, kRight = 1, kTop = 2, kLeft = 3 };

/// Which Dirichlet set a node belongs to. Left/right edges own their corners.
enum class DirichletSide { kNone, kLeft, kRight };

class StructuredMesh {
 public:
  StructuredMesh(int nx, int ny);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double hx() const { return 1.0 / nx_; }
  double hy() const { return 1.0 / ny_; }
  int num_nodes() const { return (nx_ + 1) * (ny_ + 1); }
  int num_elements() const { return nx_ * ny_; }

  int node(int i, int j) const { return j * (nx_ + 1) + i; }
  Point coords(int node) const;

  /// Counter-clockwise from the lower-left corner.
  std::array<int, 4> element_nodes(int element) const;

  /// All nodes on an edge, corners included, ordered by increasing coordinate.
  std::vector<int> edge_nodes(Boundary b) const;
  DirichletSide dirichlet_side(int node) const;

  /// Sample f(x, y) at every node.
  template <typename F>
  Vector interpolate(F&& f) const {
    Vector out(num_nodes());
    for (int n = 0; n < num_nodes(); ++n) {
      const Point p = coords(n);
      out[n] = f(p.x, p.y);
    }
    return out;
  }

 private:
  int nx_;
  int ny_;
};

struct TimeGrid {
  double final_time = 0.1567;
  int steps = 48;

  TimeGrid() = default;
  TimeGrid(double t, int n);

  double dt() const { return final_time / steps; }
  double time(int step) const { return step * dt(); }
};

/// 2x2 Gauss rule on one element with shape values and physical gradients.
/// Every element of a uniform grid shares the same table.
struct QuadratureTable {
  static constexpr int kPoints = 4;
  static constexpr int kNodes = 4;
  std::array<std::array<double, kNodes>, kPoints> shape{};
  std::array<std::array<double, kNodes>, kPoints> dshape_dx{};
  std::array<std::array<double, kNodes>, kPoints> dshape_dy{};
  std::array<Point, kPoints> local{};  // offsets from the element's lower-left corner
  double weight = 0.0;                 // Gauss weight times Jacobian (equal for all points)

  explicit QuadratureTable(const StructuredMesh& mesh);
};

/// Sparse operator with structural flags. Immutable once assembled.
struct LinearOperator {
  SparseMatrix matrix;
  bool symmetric = false;
  bool positive_definite = false;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }
  Vector apply(const Vector& x) const { return matrix * x; }
  Vector apply_transpose(const Vector& x) const { return matrix.transpose() * x; }
};

/// Velocity sampled at the quadrature points, element-major:
/// index = element * QuadratureTable::kPoints + q.
struct QuadVelocity {
  std::vector<double> vx;
  std::vector<double> vy;

  bool empty() const { return vx.empty(); }
};

LinearOperator assemble_mass(const StructuredMesh& mesh);

/// Stiffness matrix of -div(coeff grad .) with a nodal coefficient
/// interpolated bilinearly. Throws DomainError on non-positive coefficients.
LinearOperator assemble_diffusion(const StructuredMesh& mesh, const Vector& coeff);

/// Convection operator (v . grad c, w) with nodal velocity components.
LinearOperator assemble_advection(const StructuredMesh& mesh, const Vector& vx, const Vector& vy);

/// Same with velocity given directly at quadrature points.
LinearOperator assemble_advection(const StructuredMesh& mesh, const QuadVelocity& velocity);

/// Rows of bilinear interpolation weights. Throws DomainError for points
/// outside the closed unit square.
LinearOperator evaluate_at_points(const StructuredMesh& mesh, std::span<const Point> points);

/// Piecewise-bilinear hat functions on a coarse grid covering an axis-aligned
/// rectangle, sampled at the nodes of a fine mesh. Outside the rectangle every
/// hat function is zero.
class CoarseBasis {
 public:
  CoarseBasis(const StructuredMesh& fine, int cx, int cy);
  CoarseBasis(const StructuredMesh& fine, int cx, int cy, Point lower, Point upper);

  int coarse_nx() const { return cx_; }
  int coarse_ny() const { return cy_; }
  int size() const { return (cx_ + 1) * (cy_ + 1); }
  Point coarse_node(int k) const;
  const SparseMatrix& prolongation() const { return prolongation_; }

  Vector prolong(const Vector& coarse_coeffs) const;

 private:
  int cx_;
  int cy_;
  Point lower_;
  Point upper_;
  SparseMatrix prolongation_;
};

/// 1D hat functions on `count` equally spaced nodes of [0, 1], evaluated at y.
double hat_1d(int index, int count, double y);

}  // namespace hdsa
