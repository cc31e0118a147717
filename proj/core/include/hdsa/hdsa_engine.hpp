#pragma once

// Sensitivity of the minimizer m*(theta) to the complementary parameters:
//
//   D = -H^{-1} B,            H = J_mm,  B = J_m,theta
//   S_k^i = ||D e_k^i||_M / ||e_k^i||_Theta
//   S_k   = max ||D T_k theta||_M / ||theta||_Theta
//
// The engine only needs Hessian, B and B^T actions, so it runs unchanged on
// the PDE problem and on dense test problems.

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hdsa/complementary_params.hpp"
#include "hdsa/counters.hpp"
#include "hdsa/inverse_solver.hpp"
#include "hdsa/linear_oracle.hpp"

namespace hdsa {

class SensitivityProblem {
 public:
  virtual ~SensitivityProblem() = default;

  virtual const ComplementaryParams& params() const = 0;
  virtual int inversion_dim() const = 0;
  virtual Vector hess_vec(const Vector& v) const = 0;
  virtual Vector apply_B(const Vector& dtheta) const = 0;
  virtual Vector apply_Bt(const Vector& w) const = 0;
  /// M v, the Gram matrix of the inversion-parameter norm.
  virtual Vector mass_apply(const Vector& v) const = 0;
  /// Approximate H^{-1} r used to precondition CG.
  virtual Vector precondition(const Vector& r) const { return r; }
  /// Linearized-solve counters, if the problem keeps any.
  virtual const SolveCounters* counters() const { return nullptr; }
  virtual std::string hessian_label() const = 0;
  /// Parameter field at which D is evaluated (reported as ||m*||_M).
  virtual Vector solution() const = 0;
};

/// The PDE inverse problem linearized at a certified stationary point.
class PdeSensitivity final : public SensitivityProblem {
 public:
  /// Throws ValidityError unless the certificate shows a stationary point
  /// with positive curvature.
  PdeSensitivity(std::shared_ptr<const InverseProblem> problem, const Vector& m, const Vector& theta,
                 const StationarityCertificate& certificate, HessianMode mode = HessianMode::kFull);

  const ComplementaryParams& params() const override { return problem_->params(); }
  int inversion_dim() const override { return problem_->inversion_dim(); }
  Vector hess_vec(const Vector& v) const override { return lin_.hess_vec(v, mode_); }
  Vector apply_B(const Vector& dtheta) const override { return lin_.apply_B(dtheta); }
  Vector apply_Bt(const Vector& w) const override { return lin_.apply_Bt(w); }
  Vector mass_apply(const Vector& v) const override;
  Vector precondition(const Vector& r) const override { return problem_->precondition(r); }
  const SolveCounters* counters() const override { return &problem_->counters(); }
  std::string hessian_label() const override { return to_string(mode_); }
  Vector solution() const override { return lin_.m(); }

  const InverseProblem& problem() const { return *problem_; }
  const Linearization& linearization() const { return lin_; }
  const StationarityCertificate& certificate() const { return certificate_; }

 private:
  std::shared_ptr<const InverseProblem> problem_;
  Linearization lin_;
  HessianMode mode_;
  StationarityCertificate certificate_;
};

/// Dense problem with one experimental block "data" carrying Sigma^{-1}
/// norm weights and unit scaling: H = A^T W A + alpha R, B = -A^T W Y, M = I.
class DenseSensitivity final : public SensitivityProblem {
 public:
  explicit DenseSensitivity(DenseLinearProblem problem);

  const ComplementaryParams& params() const override { return params_; }
  int inversion_dim() const override { return problem_.param_size(); }
  Vector hess_vec(const Vector& v) const override;
  Vector apply_B(const Vector& dtheta) const override;
  Vector apply_Bt(const Vector& w) const override;
  Vector mass_apply(const Vector& v) const override { return v; }
  std::string hessian_label() const override { return "exact"; }
  Vector solution() const override { return solve_linear(problem_); }

  const DenseLinearProblem& problem() const { return problem_; }

 private:
  DenseLinearProblem problem_;
  Matrix hessian_;
  Matrix B_;
  ComplementaryParams params_;
};

/// Dense problem with arbitrary H, B, M and block layout; used to check the
/// generalized index against a dense decomposition.
class MatrixSensitivity final : public SensitivityProblem {
 public:
  MatrixSensitivity(Matrix H, Matrix B, Matrix M, ComplementaryParams params);

  const ComplementaryParams& params() const override { return params_; }
  int inversion_dim() const override { return static_cast<int>(H_.rows()); }
  Vector hess_vec(const Vector& v) const override { return H_ * v; }
  Vector apply_B(const Vector& dtheta) const override { return B_ * dtheta; }
  Vector apply_Bt(const Vector& w) const override { return B_.transpose() * w; }
  Vector mass_apply(const Vector& v) const override { return M_ * v; }
  std::string hessian_label() const override { return "exact"; }
  Vector solution() const override { return Vector::Zero(H_.rows()); }

 private:
  Matrix H_, B_, M_;
  ComplementaryParams params_;
};

/// How H^{-1} is applied. kDense assembles H column by column from Hessian
/// actions and factors it once; kAuto picks it up to dense_limit unknowns.
enum class HessianSolver { kAuto, kCg, kDense };

struct SensitivityOptions {
  HessianSolver hessian_solver = HessianSolver::kAuto;
  int dense_limit = 4096;
  double cg_rtol = 1e-8;
  int cg_max_iterations = 2000;
  double power_tol = 1e-8;
  int power_max_iterations = 200;
  unsigned long long seed = 20240101ULL;
  /// 0 means HDSA_NUM_THREADS or 1.
  int threads = 0;
};

struct ApplyStats {
  int cg_iterations = 0;
  double relative_residual = 0.0;
  long long linearized_solves = 0;
};

struct GeneralizedIndex {
  double value = 0.0;
  Vector direction;  // block coordinates, unit Theta norm
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;  // ||G x - lambda x||_N / lambda at the last iterate
  std::string method;
};

struct BlockReport {
  std::string name;
  BlockKind kind = BlockKind::kAuxiliary;
  int size = 0;
  double scale = 1.0;
  std::string norm_label;
  std::vector<EntryInfo> entries;
  std::vector<double> pointwise;
  GeneralizedIndex generalized;
  /// D applied to the maximizing direction.
  Vector response;
};

struct SensitivityReport {
  std::string hessian;
  std::string hessian_solver;
  double solution_norm = 0.0;  // ||m*||_M
  double cg_rtol = 0.0;
  double power_tol = 0.0;
  unsigned long long seed = 0;
  bool orthonormalized_bases = false;
  long long total_cg_iterations = 0;
  long long apply_D_calls = 0;
  std::vector<BlockReport> blocks;
};

class SensitivityOperator {
 public:
  SensitivityOperator(std::shared_ptr<const SensitivityProblem> problem, SensitivityOptions options = {});

  const SensitivityProblem& problem() const { return *problem_; }
  const SensitivityOptions& options() const { return options_; }

  Vector apply_B(const Vector& dtheta) const;
  /// -H^{-1} B dtheta by preconditioned CG. Throws ValidityError on
  /// non-positive curvature and SolverError if CG does not converge.
  Vector apply_D(const Vector& dtheta, ApplyStats* stats = nullptr) const;
  /// D^T w = -B^T H^{-1} w (Euclidean adjoint).
  Vector apply_Dt(const Vector& w, ApplyStats* stats = nullptr) const;
  /// H^{-1} r.
  Vector solve_hessian(const Vector& r, ApplyStats* stats = nullptr) const;

  double mass_norm(const Vector& v) const;

  /// Columns D e_k^i for every entry of block k, computed in parallel.
  /// Per-column CG iteration counts go to cg_iterations when given.
  Matrix block_columns(int k, std::vector<int>* cg_iterations = nullptr) const;
  std::vector<double> pointwise_indices(int k) const;
  std::vector<double> pointwise_from_columns(int k, const Matrix& columns) const;

  /// Power iteration on N^{-1} T_k^T D^T M D T_k with matrix-free D, D^T.
  GeneralizedIndex generalized_index(int k) const;
  /// The same iteration run on the Gram matrix of precomputed columns.
  GeneralizedIndex generalized_from_columns(int k, const Matrix& columns) const;

  /// Pointwise and generalized indices for every block.
  SensitivityReport full_report() const;

  int threads() const;
  bool uses_dense_hessian() const;
  /// Assembled and factored on first use; throws ValidityError when H is
  /// not positive definite.
  const Matrix& dense_hessian() const;

 private:
  struct DenseFactor;
  const DenseFactor& dense_factor() const;

  std::shared_ptr<const SensitivityProblem> problem_;
  SensitivityOptions options_;
  mutable std::shared_ptr<DenseFactor> dense_;
  mutable std::shared_ptr<std::once_flag> dense_once_;
};

std::string to_string(HessianSolver solver);

}  // namespace hdsa
