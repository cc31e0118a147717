#pragma once

// Trust-region Newton-CG minimization. The trust region is measured in the
// norm induced by an SPD preconditioner P, the inner solver is Steihaug's
// truncated preconditioned CG, and gradients are measured in the dual norm
// sqrt(g^T P^{-1} g).

#include <functional>
#include <string>
#include <vector>

#include "hdsa/inverse_problem.hpp"

namespace hdsa {

enum class InnerHessian { kAuto, kFull, kGaussNewton };

struct OptimizerConfig {
  /// Stop when ||g|| / ||g_ref|| falls below this.
  double gradient_rtol = 1e-6;
  int max_iterations = 500;
  /// Inexact-Newton forcing term min(cg_rtol, (||g|| / ||g_ref||)^cg_forcing_power).
  double cg_rtol = 0.5;
  double cg_forcing_power = 0.5;
  int cg_max_iterations = 200;
  double initial_radius = 10.0;
  double max_radius = 1e4;
  /// Minimum actual/predicted reduction ratio for accepting a step.
  double acceptance = 1e-4;
  /// kAuto uses Gauss-Newton until the relative gradient drops below
  /// gauss_newton_switch, then the full Hessian.
  InnerHessian inner_hessian = InnerHessian::kAuto;
  double gauss_newton_switch = 1e-3;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  double relative_gradient = 0.0;
  double radius = 0.0;
  int cg_iterations = 0;
  std::string cg_exit;
  std::string hessian;
  double step_norm = 0.0;
  double ratio = 0.0;
  bool accepted = false;
};

using IterationLog = std::vector<IterationRecord>;

/// Local quadratic model at one iterate.
struct TrustRegionPoint {
  double value = 0.0;
  Vector gradient;
  std::function<Vector(const Vector&, HessianMode)> hess_vec;
};

struct TrustRegionFunctions {
  std::function<TrustRegionPoint(const Vector&)> evaluate;
  /// P^{-1} r.
  std::function<Vector(const Vector&)> precondition;
  /// P s.
  std::function<Vector(const Vector&)> metric;
};

struct TrustRegionResult {
  Vector x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double reference_gradient_norm = 0.0;
  double relative_gradient = 0.0;
  IterationLog log;
  std::string message;
};

/// reference_gradient_norm <= 0 means "use the gradient norm at x0".
TrustRegionResult minimize_trust_region(const TrustRegionFunctions& f, const Vector& x0,
                                        const OptimizerConfig& config, double reference_gradient_norm = 0.0);

// ---------------------------------------------------------------------------

/// sqrt(g^T P^{-1} g).
double gradient_norm(const InverseProblem& problem, const Vector& g);
/// Gradient norm at m = 0, the default reference for relative tolerances.
double reference_gradient_norm(const InverseProblem& problem, const Vector& theta);

/// Minimizes J(., theta) from m0. The relative gradient is measured against
/// reference_gradient_norm, or against the gradient at m = 0 when it is not
/// given, so restarting from a converged point terminates immediately.
TrustRegionResult solve_inverse(const InverseProblem& problem, const Vector& theta, const Vector& m0,
                                const OptimizerConfig& config, double reference_gradient_norm = 0.0);

struct StationarityCertificate {
  double relative_gradient = 0.0;
  double gradient_norm = 0.0;
  double reference_gradient_norm = 0.0;
  double threshold = 1e-6;
  HessianMode hessian = HessianMode::kFull;
  int probe_iterations = 0;
  /// Smallest d^T H d / d^T P d seen by the CG curvature probe.
  double min_curvature = 0.0;

  bool stationary() const { return relative_gradient <= threshold; }
  bool positive_curvature() const { return min_curvature > 0.0; }
  bool valid() const { return stationary() && positive_curvature(); }
};

/// Relative gradient at (m, theta) plus a short CG run on H x = P 1 that
/// records the curvature along every search direction.
StationarityCertificate check_stationarity(const InverseProblem& problem, const Vector& m, const Vector& theta,
                                           double reference_gradient_norm, double threshold = 1e-6,
                                           HessianMode mode = HessianMode::kFull, int probe_iterations = 10);

std::string to_string(InnerHessian mode);
std::string to_string(HessianMode mode);

}  // namespace hdsa
