#include "hdsa/forward_model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hdsa/errors.hpp"
#include "hdsa/fem_kernels.hpp"

namespace hdsa {

double nominal_pressure_right(double y) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  return 15.0 + std::cos(kTwoPi * y) + 0.5 * std::cos(2.0 * kTwoPi * y);
}

double nominal_pressure_left(double y) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  return 10.0 + 2.0 * std::cos(kTwoPi * y);
}

std::vector<Point> default_wells() {
  std::vector<Point> wells;
  for (int j = 1; j <= 4; ++j) {
    for (int i = 1; i <= 4; ++i) wells.push_back({0.2 * i, 0.2 * j});
  }
  return wells;
}

void ModelConfig::validate() const {
  if (!(diffusivity > 0.0)) throw DomainError("diffusivity must be positive");
  if (!(final_time > 0.0)) throw DomainError("final time must be positive");
  if (!pressure_left || !pressure_right) throw DomainError("Dirichlet profiles are not set");
  if (boundary_nodes < 2) throw DomainError("boundary perturbation basis needs at least 2 nodes");
  if (!(well_patch_halfwidth > 0.0)) throw DomainError("well patch half width must be positive");
}

AuxiliaryParams AuxiliaryParams::nominal(const ModelConfig& config, double scale) {
  AuxiliaryParams aux;
  aux.source = Vector::Zero(static_cast<Eigen::Index>(config.wells.size()) * kLocalPerWell);
  aux.bc_left = Vector::Zero(config.boundary_nodes);
  aux.bc_right = Vector::Zero(config.boundary_nodes);
  aux.diffusion = 0.0;
  aux.scale = scale;
  return aux;
}

SensorLayout SensorLayout::standard(int steps, int stride) {
  if (steps < 1 || stride < 1 || steps % stride != 0) {
    throw DomainError("sensor layout: step count must be a positive multiple of the stride");
  }
  SensorLayout layout;
  for (int l = 0; l < 5; ++l) {
    for (int k = 0; k < 7; ++k) layout.pressure.push_back({(k + 0.5) / 7.0, (l + 0.5) / 5.0});
  }
  for (int l = 1; l <= 7; ++l) {
    for (int k = 1; k <= 7; ++k) layout.concentration.push_back({k / 8.0, l / 8.0});
  }
  for (int s = stride; s <= steps; s += stride) layout.observation_steps.push_back(s);
  return layout;
}

PressureSystem::PressureSystem(const SparseMatrix& stiffness, std::vector<char> dirichlet_mask)
    : stiffness_(stiffness), mask_(std::move(dirichlet_mask)) {
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(stiffness.nonZeros()));
  for (int col = 0; col < stiffness.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(stiffness, col); it; ++it) {
      const auto r = it.row();
      const auto c = it.col();
      if (mask_[r] || mask_[c]) continue;
      triplets.emplace_back(static_cast<int>(r), static_cast<int>(c), it.value());
    }
  }
  for (std::size_t n = 0; n < mask_.size(); ++n) {
    if (mask_[n]) triplets.emplace_back(static_cast<int>(n), static_cast<int>(n), 1.0);
  }
  SparseMatrix reduced(stiffness.rows(), stiffness.cols());
  reduced.setFromTriplets(triplets.begin(), triplets.end());
  solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(reduced);
  if (solver_->info() != Eigen::Success) {
    throw SolverError("pressure operator factorization failed");
  }
}

Vector PressureSystem::solve(const Vector& rhs, const Vector& dirichlet) const {
  Vector lifted = Vector::Zero(rhs.size());
  for (std::size_t n = 0; n < mask_.size(); ++n) {
    if (mask_[n]) lifted[n] = dirichlet[n];
  }
  Vector b = rhs - stiffness_ * lifted;
  for (std::size_t n = 0; n < mask_.size(); ++n) {
    if (mask_[n]) b[n] = dirichlet[n];
  }
  Vector x = solver_->solve(b);
  if (solver_->info() != Eigen::Success) throw SolverError("pressure solve failed");
  return x;
}

Vector PressureSystem::solve_homogeneous(const Vector& rhs) const {
  Vector b = rhs;
  for (std::size_t n = 0; n < mask_.size(); ++n) {
    if (mask_[n]) b[n] = 0.0;
  }
  Vector x = solver_->solve(b);
  if (solver_->info() != Eigen::Success) throw SolverError("pressure adjoint solve failed");
  return x;
}

TransportSystem::TransportSystem(SparseMatrix step_matrix)
    : matrix_(std::move(step_matrix)), lu_(std::make_shared<Eigen::SparseLU<SparseMatrix>>()) {
  lu_->analyzePattern(matrix_);
  lu_->factorize(matrix_);
  if (lu_->info() != Eigen::Success) {
    throw SolverError("transport step matrix factorization failed: " + lu_->lastErrorMessage());
  }
}

Vector TransportSystem::solve(const Vector& rhs) const {
  Vector x = lu_->solve(rhs);
  if (lu_->info() != Eigen::Success) throw SolverError("transport step solve failed");
  return x;
}

Vector TransportSystem::solve_transpose(const Vector& rhs) const {
  Vector x = lu_->transpose().solve(rhs);
  return x;
}

ForwardModel::ForwardModel(StructuredMesh mesh, TimeGrid time, ModelConfig config, SensorLayout sensors)
    : mesh_(mesh),
      time_(time),
      config_(std::move(config)),
      sensors_(std::move(sensors)),
      quad_(mesh_),
      mass_(assemble_mass(mesh_)),
      stiffness_(assemble_diffusion(mesh_, Vector::Ones(mesh_.num_nodes()))) {
  config_.validate();
  for (int s : sensors_.observation_steps) {
    if (s < 1 || s > time_.steps) {
      throw DomainError("observation step " + std::to_string(s) + " outside the time grid");
    }
  }
  pressure_observer_ = evaluate_at_points(mesh_, sensors_.pressure).matrix;
  concentration_observer_ = evaluate_at_points(mesh_, sensors_.concentration).matrix;

  const int n = mesh_.num_nodes();
  dirichlet_mask_.assign(static_cast<std::size_t>(n), 0);
  nominal_dirichlet_ = Vector::Zero(n);
  for (int node = 0; node < n; ++node) {
    const auto side = mesh_.dirichlet_side(node);
    if (side == DirichletSide::kNone) continue;
    dirichlet_mask_[static_cast<std::size_t>(node)] = 1;
    const double y = mesh_.coords(node).y;
    nominal_dirichlet_[node] =
        side == DirichletSide::kLeft ? config_.pressure_left(y) : config_.pressure_right(y);
  }

  const int nb = config_.boundary_nodes;
  std::vector<Eigen::Triplet<double>> left, right;
  for (int node = 0; node < n; ++node) {
    const auto side = mesh_.dirichlet_side(node);
    if (side == DirichletSide::kNone) continue;
    const double y = mesh_.coords(node).y;
    for (int j = 0; j < nb; ++j) {
      const double phi = hat_1d(j, nb, y);
      if (phi == 0.0) continue;
      if (side == DirichletSide::kLeft) {
        left.emplace_back(node, j, config_.pressure_left(y) * phi);
      } else {
        right.emplace_back(node, j, config_.pressure_right(y) * phi);
      }
    }
  }
  boundary_left_.resize(n, nb);
  boundary_left_.setFromTriplets(left.begin(), left.end());
  boundary_right_.resize(n, nb);
  boundary_right_.setFromTriplets(right.begin(), right.end());

  nominal_source_ = Vector::Zero(n);
  std::vector<Eigen::Triplet<double>> src;
  const double hw = config_.well_patch_halfwidth;
  for (std::size_t k = 0; k < config_.wells.size(); ++k) {
    const Point w = config_.wells[k];
    const Vector g_k = mesh_.interpolate([&](double x, double y) {
      return config_.source_amplitude *
             std::exp(-config_.source_decay * ((x - w.x) * (x - w.x) + (y - w.y) * (y - w.y)));
    });
    nominal_source_ += g_k;
    const CoarseBasis patch(mesh_, 2, 2, {w.x - hw, w.y - hw}, {w.x + hw, w.y + hw});
    const SparseMatrix& P = patch.prolongation();
    for (int col = 0; col < P.outerSize(); ++col) {
      for (SparseMatrix::InnerIterator it(P, col); it; ++it) {
        src.emplace_back(static_cast<int>(it.row()),
                         static_cast<int>(k) * AuxiliaryParams::kLocalPerWell + col,
                         g_k[it.row()] * it.value());
      }
    }
  }
  source_basis_.resize(n, num_source_params());
  source_basis_.setFromTriplets(src.begin(), src.end());

  mass_solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(mass_.matrix);
}

const SparseMatrix& ForwardModel::boundary_basis(DirichletSide side) const {
  if (side == DirichletSide::kLeft) return boundary_left_;
  if (side == DirichletSide::kRight) return boundary_right_;
  throw DomainError("boundary_basis: not a Dirichlet side");
}

Point ForwardModel::source_param_location(int k) const {
  const int well = k / AuxiliaryParams::kLocalPerWell;
  const int local = k % AuxiliaryParams::kLocalPerWell;
  const double hw = config_.well_patch_halfwidth;
  const Point w = config_.wells.at(static_cast<std::size_t>(well));
  return {w.x - hw + hw * (local % 3), w.y - hw + hw * (local / 3)};
}

void ForwardModel::check_aux(const AuxiliaryParams& aux) const {
  if (aux.source.size() != num_source_params() || aux.bc_left.size() != num_boundary_params() ||
      aux.bc_right.size() != num_boundary_params()) {
    throw DomainError("auxiliary parameter blocks have the wrong size");
  }
}

Vector ForwardModel::source(const AuxiliaryParams& aux) const {
  check_aux(aux);
  return nominal_source_ + aux.scale * (source_basis_ * aux.source);
}

Vector ForwardModel::dirichlet_values(const AuxiliaryParams& aux) const {
  check_aux(aux);
  return nominal_dirichlet_ + aux.scale * (boundary_left_ * aux.bc_left + boundary_right_ * aux.bc_right);
}

double ForwardModel::diffusivity(const AuxiliaryParams& aux) const {
  return config_.diffusivity * (1.0 + aux.scale * aux.diffusion);
}

PressureSystem ForwardModel::pressure_system(const Vector& m) const {
  if (m.size() != mesh_.num_nodes()) throw DomainError("log-permeability has the wrong size");
  if (!m.allFinite()) throw DomainError("log-permeability is not finite");
  return PressureSystem(assemble_diffusion(mesh_, m.array().exp().matrix()).matrix, dirichlet_mask_);
}

Vector ForwardModel::solve_pressure(const Vector& m, const AuxiliaryParams& aux) const {
  const PressureSystem sys = pressure_system(m);
  return sys.solve(Vector::Zero(mesh_.num_nodes()), dirichlet_values(aux));
}

QuadVelocity ForwardModel::element_velocity(const Vector& m, const Vector& p) const {
  const fem::QuadField kappa = fem::values_at_quadrature(mesh_, quad_, m.array().exp().matrix());
  QuadVelocity v;
  fem::gradient_at_quadrature(mesh_, quad_, p, v.vx, v.vy);
  for (std::size_t k = 0; k < kappa.size(); ++k) {
    v.vx[k] *= -kappa[k];
    v.vy[k] *= -kappa[k];
  }
  return v;
}

std::pair<Vector, Vector> ForwardModel::darcy_velocity(const Vector& m, const Vector& p) const {
  QuadVelocity v = element_velocity(m, p);
  for (auto& x : v.vx) x *= quad_.weight;
  for (auto& y : v.vy) y *= quad_.weight;
  Vector bx = Vector::Zero(mesh_.num_nodes());
  Vector by = Vector::Zero(mesh_.num_nodes());
  fem::scatter_shape(mesh_, quad_, v.vx, bx);
  fem::scatter_shape(mesh_, quad_, v.vy, by);
  return {mass_solver_->solve(bx), mass_solver_->solve(by)};
}

TransportSystem ForwardModel::transport_system(const QuadVelocity& v, double diffusivity) const {
  if (!(diffusivity > 0.0)) throw DomainError("transport diffusivity must be positive");
  const double dt = time_.dt();
  SparseMatrix t = mass_.matrix + (dt * diffusivity) * stiffness_.matrix +
                   dt * assemble_advection(mesh_, v).matrix;
  return TransportSystem(std::move(t));
}

std::vector<Vector> ForwardModel::solve_transport(const QuadVelocity& v, const AuxiliaryParams& aux) const {
  const TransportSystem sys = transport_system(v, diffusivity(aux));
  const Vector load = time_.dt() * (mass_.matrix * source(aux));
  std::vector<Vector> c;
  c.reserve(static_cast<std::size_t>(time_.steps) + 1);
  c.push_back(Vector::Zero(mesh_.num_nodes()));
  for (int j = 1; j <= time_.steps; ++j) {
    c.push_back(sys.solve(mass_.matrix * c.back() + load));
  }
  return c;
}

ForwardSolution ForwardModel::solve(const Vector& m, const AuxiliaryParams& aux) const {
  ForwardSolution sol;
  sol.pressure = solve_pressure(m, aux);
  sol.element_velocity = element_velocity(m, sol.pressure);
  std::tie(sol.velocity_x, sol.velocity_y) = darcy_velocity(m, sol.pressure);
  sol.concentration = solve_transport(sol.element_velocity, aux);
  return sol;
}

Vector ForwardModel::observe(const Vector& pressure, const std::vector<Vector>& concentration) const {
  Vector d(sensors_.data_size());
  d.head(sensors_.num_pressure()) = pressure_observer_ * pressure;
  const int nt = sensors_.num_times();
  for (int t = 0; t < nt; ++t) {
    const Vector cs = concentration_observer_ * concentration.at(
        static_cast<std::size_t>(sensors_.observation_steps[static_cast<std::size_t>(t)]));
    for (int s = 0; s < sensors_.num_concentration(); ++s) {
      d[sensors_.concentration_index(s, t)] = cs[s];
    }
  }
  return d;
}

Vector ForwardModel::predict_observations(const Vector& m, const AuxiliaryParams& aux) const {
  const Vector p = solve_pressure(m, aux);
  return observe(p, solve_transport(element_velocity(m, p), aux));
}

double ForwardModel::max_peclet(const QuadVelocity& v, double diffusivity) const {
  const double h = std::max(mesh_.hx(), mesh_.hy());
  double vmax = 0.0;
  for (std::size_t k = 0; k < v.vx.size(); ++k) {
    vmax = std::max(vmax, std::hypot(v.vx[k], v.vy[k]));
  }
  return vmax * h / (2.0 * diffusivity);
}

}  // namespace hdsa
