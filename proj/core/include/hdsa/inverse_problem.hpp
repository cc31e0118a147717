#pragma once

// Reduced-space objective for log-permeability inversion
//
//   J(m, theta) = 1/2 ||Q A(m, theta_a) - y(theta_e)||_W^2
//               + alpha/2 m^T K m + beta/2 m^T M m
//
// with exact discrete adjoints. Every derivative (gradient, Hessian action,
// mixed derivative B and its transpose) is the exact derivative of the
// discrete objective, so finite-difference checks hold to round-off.

#include <memory>
#include <vector>

#include "hdsa/complementary_params.hpp"
#include "hdsa/counters.hpp"
#include "hdsa/forward_model.hpp"

namespace hdsa {

struct ObjectiveSpec {
  double alpha = 3e-2;
  double sigma = 0.03;
  /// Optional L2 shift beta; zero by default and reported when used.
  double l2_shift = 0.0;
  double experimental_scale = 0.05;
  double auxiliary_scale = 0.2;
};

enum class HessianMode { kFull, kGaussNewton };

/// Deliberate defects for mutation testing of the verification suite.
enum class AdjointFault { kNone, kFlipTransportCoupling };

class InverseProblem;

/// Forward and adjoint state at one (m, theta). Cheap to copy; immutable and
/// safe to share across threads.
class Linearization {
 public:
  const Vector& m() const;
  const Vector& theta() const;
  double objective() const;
  double misfit() const;
  const Vector& gradient() const;
  /// dJ/dtheta.
  Vector gradient_theta() const;

  Vector hess_vec(const Vector& dm, HessianMode mode = HessianMode::kFull) const;
  /// B dtheta = d/dtheta (dJ/dm) dtheta.
  Vector apply_B(const Vector& dtheta) const;
  /// B^T w = d/dm (dJ/dtheta) w.
  Vector apply_Bt(const Vector& w) const;

  /// Linearized observations J dm.
  Vector jacobian_apply(const Vector& dm) const;
  /// J^T r.
  Vector jacobian_transpose(const Vector& r) const;

  const Vector& pressure() const;
  const std::vector<Vector>& concentration() const;
  const Vector& predictions() const;

  // Implementation types, opaque outside the library.
  struct State;
  struct Tangent;

 private:
  friend class InverseProblem;
  std::shared_ptr<const State> state_;

  Tangent forward_tangent(const Vector& dm, const Vector& dtheta) const;
  Vector adjoint_tangent(const Tangent& tan, const Vector& dm, const Vector& dtheta, bool want_theta) const;
};

class InverseProblem {
 public:
  InverseProblem(std::shared_ptr<const ForwardModel> model, ObjectiveSpec spec, Vector observed);

  const ForwardModel& model() const { return *model_; }
  std::shared_ptr<const ForwardModel> model_ptr() const { return model_; }
  const ObjectiveSpec& spec() const { return spec_; }
  const Vector& observed() const { return observed_; }
  /// Diagonal of W.
  const Vector& weights() const { return weights_; }
  double pressure_mean() const { return pressure_mean_; }
  double concentration_mean() const { return concentration_mean_; }
  const ComplementaryParams& params() const { return params_; }
  int inversion_dim() const { return model_->mesh().num_nodes(); }

  AuxiliaryParams auxiliary(const Vector& theta) const;
  /// y(theta_e) = y_observed (1 + a_e theta_e).
  Vector data(const Vector& theta) const;

  /// Forward plus adjoint solve.
  Linearization linearize(const Vector& m, const Vector& theta) const;
  /// Forward solve only.
  double objective(const Vector& m, const Vector& theta) const;
  Vector gradient(const Vector& m, const Vector& theta) const;

  double regularization(const Vector& m) const;
  Vector regularization_gradient(const Vector& m) const;

  /// alpha K + (beta + alpha) M: spectrally equivalent to the regularization
  /// Hessian and nonsingular on constants. Used as a CG preconditioner.
  const SparseMatrix& preconditioner_matrix() const { return preconditioner_; }
  Vector precondition(const Vector& r) const;

  double mass_inner(const Vector& a, const Vector& b) const;
  double mass_norm(const Vector& a) const;

  SolveCounters& counters() const { return *counters_; }
  void inject_fault(AdjointFault fault) { fault_ = fault; }
  AdjointFault fault() const { return fault_; }

 private:
  void build_params();

  std::shared_ptr<const ForwardModel> model_;
  ObjectiveSpec spec_;
  Vector observed_;
  Vector weights_;
  double pressure_mean_ = 0.0;
  double concentration_mean_ = 0.0;
  ComplementaryParams params_;
  SparseMatrix preconditioner_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> preconditioner_solver_;
  std::shared_ptr<SolveCounters> counters_;
  AdjointFault fault_ = AdjointFault::kNone;
};

}  // namespace hdsa
