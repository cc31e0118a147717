#pragma once

// Darcy pressure and tracer transport on the unit square:
//
//   -div(e^m grad p) = 0                       in Omega
//   c_t - div(eps grad c) + v . grad c = g     in (0, T] x Omega,  v = -e^m grad p
//   p = p_right on the right edge, p = p_left on the left edge,
//   zero normal pressure gradient on top/bottom, zero diffusive flux for c,
//   c(0) = 0.
//
// Auxiliary parameters perturb the source, both Dirichlet profiles and the
// diffusivity multiplicatively: d = d_nominal * (1 + a * sum_i theta_i phi_i).

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "hdsa/grid_fem.hpp"

namespace hdsa {

/// p1(y) = 15 + cos(2 pi y) + cos(4 pi y) / 2, imposed on the right edge.
double nominal_pressure_right(double y);
/// p2(y) = 10 + 2 cos(2 pi y), imposed on the left edge.
double nominal_pressure_left(double y);
/// 4x4 grid of injection wells at {0.2, 0.4, 0.6, 0.8}^2.
std::vector<Point> default_wells();

struct ModelConfig {
  double diffusivity = 0.025;
  double final_time = 0.1567;
  std::function<double(double)> pressure_right = nominal_pressure_right;
  std::function<double(double)> pressure_left = nominal_pressure_left;
  double source_amplitude = 10.0;
  double source_decay = 100.0;
  std::vector<Point> wells = default_wells();
  /// Half width of the 3x3-node perturbation patch centred on each well.
  double well_patch_halfwidth = 0.1;
  int boundary_nodes = 21;

  void validate() const;
};

struct AuxiliaryParams {
  static constexpr int kLocalPerWell = 9;

  Vector source;    // wells x 9, well-major
  Vector bc_left;   // boundary_nodes
  Vector bc_right;  // boundary_nodes
  double diffusion = 0.0;
  double scale = 0.2;

  /// All-zero coefficients: the unperturbed model.
  static AuxiliaryParams nominal(const ModelConfig& config, double scale = 0.2);
};

struct SensorLayout {
  std::vector<Point> pressure;
  std::vector<Point> concentration;
  std::vector<int> observation_steps;  // 1-based time-step indices

  int num_pressure() const { return static_cast<int>(pressure.size()); }
  int num_concentration() const { return static_cast<int>(concentration.size()); }
  int num_times() const { return static_cast<int>(observation_steps.size()); }
  /// n = n_p + n_c * n_t.
  int data_size() const { return num_pressure() + num_concentration() * num_times(); }
  /// Concentration data are sensor-major, time-minor.
  int concentration_index(int sensor, int time) const {
    return num_pressure() + sensor * num_times() + time;
  }

  /// 35 pressure sensors (7 x 5) and 49 concentration sensors (7 x 7),
  /// observing at every `stride`-th step of a grid with `steps` steps.
  static SensorLayout standard(int steps, int stride = 1);
};

/// Factorized pressure operator with Dirichlet rows and columns eliminated
/// symmetrically.
class PressureSystem {
 public:
  PressureSystem(const SparseMatrix& stiffness, std::vector<char> dirichlet_mask);

  /// Solve K p = rhs on free rows with p = dirichlet on constrained rows.
  Vector solve(const Vector& rhs, const Vector& dirichlet) const;
  /// Solve with homogeneous Dirichlet data (the adjoint form).
  Vector solve_homogeneous(const Vector& rhs) const;

  const SparseMatrix& stiffness() const { return stiffness_; }
  const std::vector<char>& dirichlet_mask() const { return mask_; }

 private:
  SparseMatrix stiffness_;
  std::vector<char> mask_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> solver_;
};

/// Factorized implicit-Euler step matrix T = M + dt (eps K + A(v)).
class TransportSystem {
 public:
  TransportSystem(SparseMatrix step_matrix);

  Vector solve(const Vector& rhs) const;
  Vector solve_transpose(const Vector& rhs) const;
  const SparseMatrix& matrix() const { return matrix_; }

 private:
  SparseMatrix matrix_;
  std::shared_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
};

struct ForwardSolution {
  Vector pressure;
  Vector velocity_x;  // nodal L2 projection, reporting only
  Vector velocity_y;
  QuadVelocity element_velocity;
  std::vector<Vector> concentration;  // steps + 1 snapshots, concentration[0] = 0
};

class ForwardModel {
 public:
  ForwardModel(StructuredMesh mesh, TimeGrid time, ModelConfig config, SensorLayout sensors);

  const StructuredMesh& mesh() const { return mesh_; }
  const TimeGrid& time() const { return time_; }
  const ModelConfig& config() const { return config_; }
  const SensorLayout& sensors() const { return sensors_; }
  const QuadratureTable& quadrature() const { return quad_; }
  const LinearOperator& mass() const { return mass_; }
  /// Stiffness with unit coefficient; also the H1-seminorm Gram matrix.
  const LinearOperator& stiffness() const { return stiffness_; }
  const SparseMatrix& pressure_observer() const { return pressure_observer_; }
  const SparseMatrix& concentration_observer() const { return concentration_observer_; }
  const std::vector<char>& dirichlet_mask() const { return dirichlet_mask_; }

  int num_source_params() const { return static_cast<int>(config_.wells.size()) * AuxiliaryParams::kLocalPerWell; }
  int num_boundary_params() const { return config_.boundary_nodes; }

  /// Columns g_k(x) phi_{k,i}(x): nodal source response to unit coefficients (unscaled).
  const SparseMatrix& source_basis() const { return source_basis_; }
  /// Columns p(y) phi_j(y) on the constrained nodes of one edge (unscaled).
  const SparseMatrix& boundary_basis(DirichletSide side) const;
  const Vector& nominal_source() const { return nominal_source_; }
  /// Nominal Dirichlet values on constrained nodes, zero elsewhere.
  const Vector& nominal_dirichlet() const { return nominal_dirichlet_; }
  /// Centre of the local patch node for source coefficient k.
  Point source_param_location(int k) const;

  Vector source(const AuxiliaryParams& aux) const;
  Vector dirichlet_values(const AuxiliaryParams& aux) const;
  double diffusivity(const AuxiliaryParams& aux) const;

  PressureSystem pressure_system(const Vector& m) const;
  Vector solve_pressure(const Vector& m, const AuxiliaryParams& aux) const;

  /// -e^m grad p at the quadrature points: the velocity seen by transport.
  QuadVelocity element_velocity(const Vector& m, const Vector& p) const;
  /// Nodal L2 projection of the element velocity.
  std::pair<Vector, Vector> darcy_velocity(const Vector& m, const Vector& p) const;

  TransportSystem transport_system(const QuadVelocity& v, double diffusivity) const;
  std::vector<Vector> solve_transport(const QuadVelocity& v, const AuxiliaryParams& aux) const;

  ForwardSolution solve(const Vector& m, const AuxiliaryParams& aux) const;
  Vector observe(const Vector& pressure, const std::vector<Vector>& concentration) const;
  Vector predict_observations(const Vector& m, const AuxiliaryParams& aux) const;

  /// max over quadrature points of |v| h / (2 eps).
  double max_peclet(const QuadVelocity& v, double diffusivity) const;

 private:
  void check_aux(const AuxiliaryParams& aux) const;

  StructuredMesh mesh_;
  TimeGrid time_;
  ModelConfig config_;
  SensorLayout sensors_;
  QuadratureTable quad_;
  LinearOperator mass_;
  LinearOperator stiffness_;
  SparseMatrix pressure_observer_;
  SparseMatrix concentration_observer_;
  std::vector<char> dirichlet_mask_;
  SparseMatrix source_basis_;
  SparseMatrix boundary_left_;
  SparseMatrix boundary_right_;
  Vector nominal_source_;
  Vector nominal_dirichlet_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> mass_solver_;
};

}  // namespace hdsa
