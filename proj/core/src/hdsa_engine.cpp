#include "hdsa/hdsa_engine.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "hdsa/errors.hpp"

namespace hdsa {

PdeSensitivity::PdeSensitivity(std::shared_ptr<const InverseProblem> problem, const Vector& m, const Vector& theta,
                               const StationarityCertificate& certificate, HessianMode mode)
    : problem_(std::move(problem)), mode_(mode), certificate_(certificate) {
  if (!certificate.stationary()) {
    throw ValidityError("sensitivity analysis requires a stationary point of the inverse problem: relative gradient " +
                        std::to_string(certificate.relative_gradient) + " exceeds threshold " +
                        std::to_string(certificate.threshold));
  }
  if (!certificate.positive_curvature()) {
    throw ValidityError(
        "sensitivity analysis requires a positive definite Hessian at the solution: curvature probe found " +
        std::to_string(certificate.min_curvature));
  }
  lin_ = problem_->linearize(m, theta);
}

Vector PdeSensitivity::mass_apply(const Vector& v) const { return problem_->model().mass().matrix * v; }

// ---------------------------------------------------------------------------

DenseSensitivity::DenseSensitivity(DenseLinearProblem problem) : problem_(std::move(problem)) {
  problem_.validate();
  const Vector w = problem_.weights();
  hessian_ = problem_.hessian();
  B_ = -(problem_.A.transpose() * w.cwiseProduct(problem_.y_nominal).asDiagonal());
  ParamBlock data;
  data.name = "data";
  data.kind = BlockKind::kExperimental;
  data.size = problem_.data_size();
  data.scale = 1.0;
  data.norm_weights = w;
  data.norm_label = "inverse noise covariance";
  for (int i = 0; i < data.size; ++i) {
    EntryInfo e;
    e.sensor = i;
    data.entries.push_back(e);
  }
  params_.add_block(std::move(data));
}

Vector DenseSensitivity::hess_vec(const Vector& v) const { return hessian_ * v; }
Vector DenseSensitivity::apply_B(const Vector& dtheta) const { return B_ * dtheta; }
Vector DenseSensitivity::apply_Bt(const Vector& w) const { return B_.transpose() * w; }

MatrixSensitivity::MatrixSensitivity(Matrix H, Matrix B, Matrix M, ComplementaryParams params)
    : H_(std::move(H)), B_(std::move(B)), M_(std::move(M)), params_(std::move(params)) {
  if (H_.rows() != H_.cols() || M_.rows() != H_.rows() || M_.cols() != H_.cols() || B_.rows() != H_.rows() ||
      B_.cols() != params_.size()) {
    throw DomainError("matrix sensitivity: inconsistent operator shapes");
  }
}

// ---------------------------------------------------------------------------

namespace {

std::string gauss_newton_hint(const std::string& label) {
  return label == "full" ? "; the full Hessian is indefinite here, select the Gauss-Newton Hessian instead" : "";
}

long long counter_total(const SensitivityProblem& p) {
  const SolveCounters* c = p.counters();
  return c ? c->linearized_solves() : 0;
}

/// Runs body(i) for i in [0, n) on a pool of `threads` workers. The first
/// exception stops the pool and is rethrown.
template <typename Body>
void parallel_for(int n, int threads, Body&& body) {
  const int nthreads = std::max(1, std::min(threads, n));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Leading eigenpair of the N-self-adjoint operator x -> N^{-1} G x.
template <typename Apply>
GeneralizedIndex power_iteration(const Vector& weights, Apply&& apply_gram, std::mt19937_64& rng, double tol,
                                 int max_iterations) {
  const auto n = weights.size();
  auto nnorm = [&](const Vector& x) { return std::sqrt((weights.array() * x.array().square()).sum()); };
  std::normal_distribution<double> normal;
  Vector x(n);
  for (auto i = 0; i < n; ++i) x[i] = normal(rng);
  x /= nnorm(x);

  GeneralizedIndex out;
  out.method = "power iteration";
  double lambda_prev = -1.0;
  for (int it = 1; it <= max_iterations; ++it) {
    const Vector u = apply_gram(x);  // T^T D^T M D T x
    const double lambda = std::max(0.0, x.dot(u));
    out.iterations = it;
    out.direction = x;
    out.value = std::sqrt(lambda);
    if (lambda == 0.0) {
      out.converged = true;
      out.residual = 0.0;
      return out;
    }
    const Vector gx = u.cwiseQuotient(weights);
    out.residual = nnorm(gx - lambda * x) / lambda;
    if (lambda_prev >= 0.0 && std::abs(lambda - lambda_prev) <= tol * lambda) {
      out.converged = true;
      return out;
    }
    lambda_prev = lambda;
    x = gx / nnorm(gx);
  }
  return out;
}

}  // namespace

SensitivityOperator::SensitivityOperator(std::shared_ptr<const SensitivityProblem> problem,
                                         SensitivityOptions options)
    : problem_(std::move(problem)), options_(options), dense_once_(std::make_shared<std::once_flag>()) {
  if (!(options_.cg_rtol > 0.0) || options_.cg_max_iterations <= 0 || !(options_.power_tol > 0.0) ||
      options_.power_max_iterations <= 0 || options_.threads < 0 || options_.dense_limit < 0) {
    throw ConfigError("sensitivity options: tolerances and iteration caps must be positive");
  }
}

int SensitivityOperator::threads() const {
  if (options_.threads > 0) return options_.threads;
  if (const char* env = std::getenv("HDSA_NUM_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n <= 0) {
      throw ConfigError(std::string("HDSA_NUM_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<int>(n);
  }
  return 1;
}

Vector SensitivityOperator::apply_B(const Vector& dtheta) const {
  if (dtheta.size() != problem_->params().size()) throw DomainError("apply_B: theta has the wrong size");
  return problem_->apply_B(dtheta);
}

struct SensitivityOperator::DenseFactor {
  Matrix hessian;
  Eigen::LLT<Matrix> llt;
};

bool SensitivityOperator::uses_dense_hessian() const {
  switch (options_.hessian_solver) {
    case HessianSolver::kCg:
      return false;
    case HessianSolver::kDense:
      return true;
    case HessianSolver::kAuto:
      break;
  }
  return problem_->inversion_dim() <= options_.dense_limit;
}

const SensitivityOperator::DenseFactor& SensitivityOperator::dense_factor() const {
  std::call_once(*dense_once_, [this] {
    const int n = problem_->inversion_dim();
    auto f = std::make_shared<DenseFactor>();
    f->hessian.resize(n, n);
    parallel_for(n, threads(), [&](int i) { f->hessian.col(i) = problem_->hess_vec(Vector::Unit(n, i)); });
    f->hessian = 0.5 * (f->hessian + f->hessian.transpose()).eval();
    f->llt.compute(f->hessian);
    if (f->llt.info() != Eigen::Success) {
      throw ValidityError(
          "sensitivity analysis requires a positive definite Hessian at the solution: Cholesky factorization of "
          "the assembled " + problem_->hessian_label() + " Hessian failed" + gauss_newton_hint(problem_->hessian_label()));
    }
    dense_ = std::move(f);
  });
  if (!dense_) {
    throw ValidityError("sensitivity analysis requires a positive definite Hessian at the solution");
  }
  return *dense_;
}

const Matrix& SensitivityOperator::dense_hessian() const { return dense_factor().hessian; }

std::string to_string(HessianSolver solver) {
  switch (solver) {
    case HessianSolver::kAuto:
      return "auto";
    case HessianSolver::kCg:
      return "pcg";
    case HessianSolver::kDense:
      return "dense cholesky";
  }
  return "unknown";
}

Vector SensitivityOperator::solve_hessian(const Vector& b, ApplyStats* stats) const {
  if (uses_dense_hessian()) {
    Vector x = dense_factor().llt.solve(b);
    if (stats) {
      stats->cg_iterations = 0;
      stats->relative_residual = 0.0;
    }
    return x;
  }
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector z = problem_->precondition(r);
  double rz = r.dot(z);
  const double r0 = std::sqrt(std::max(rz, 0.0));
  int it = 0;
  double rel = 0.0;
  if (r0 > 0.0) {
    Vector p = z;
    rel = 1.0;
    while (rel > options_.cg_rtol) {
      if (it >= options_.cg_max_iterations) {
        throw SolverError("Hessian solve did not reach relative residual " + std::to_string(options_.cg_rtol) +
                          " in " + std::to_string(it) + " CG iterations (reached " + std::to_string(rel) + ")");
      }
      const Vector hp = problem_->hess_vec(p);
      const double php = p.dot(hp);
      ++it;
      if (!(php > 0.0)) {
        throw ValidityError(
            "sensitivity analysis requires a positive definite Hessian: CG met non-positive curvature " +
            std::to_string(php) + " at iteration " + std::to_string(it) + gauss_newton_hint(problem_->hessian_label()));
      }
      const double alpha = rz / php;
      x += alpha * p;
      r -= alpha * hp;
      z = problem_->precondition(r);
      const double rz_next = r.dot(z);
      rel = std::sqrt(std::max(rz_next, 0.0)) / r0;
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
  }
  if (stats) {
    stats->cg_iterations = it;
    stats->relative_residual = rel;
  }
  return x;
}

Vector SensitivityOperator::apply_D(const Vector& dtheta, ApplyStats* stats) const {
  const long long before = counter_total(*problem_);
  const Vector b = apply_B(dtheta);
  Vector x = solve_hessian(-b, stats);
  if (stats) stats->linearized_solves = counter_total(*problem_) - before;
  return x;
}

Vector SensitivityOperator::apply_Dt(const Vector& w, ApplyStats* stats) const {
  if (w.size() != problem_->inversion_dim()) throw DomainError("apply_Dt: vector has the wrong size");
  const long long before = counter_total(*problem_);
  const Vector y = solve_hessian(w, stats);
  Vector out = -problem_->apply_Bt(y);
  if (stats) stats->linearized_solves = counter_total(*problem_) - before;
  return out;
}

double SensitivityOperator::mass_norm(const Vector& v) const {
  return std::sqrt(std::max(0.0, v.dot(problem_->mass_apply(v))));
}

Matrix SensitivityOperator::block_columns(int k, std::vector<int>* cg_iterations) const {
  const auto& params = problem_->params();
  const auto& block = params.block(k);
  Matrix columns(problem_->inversion_dim(), block.size);
  std::vector<int> iterations(static_cast<std::size_t>(block.size), 0);
  if (uses_dense_hessian()) dense_factor();
  parallel_for(block.size, threads(), [&](int i) {
    Vector unit = Vector::Zero(block.size);
    unit[i] = 1.0;
    ApplyStats stats;
    columns.col(i) = apply_D(params.extend(unit, k), &stats);
    iterations[static_cast<std::size_t>(i)] = stats.cg_iterations;
  });
  if (cg_iterations) *cg_iterations = std::move(iterations);
  return columns;
}

std::vector<double> SensitivityOperator::pointwise_from_columns(int k, const Matrix& columns) const {
  const auto& block = problem_->params().block(k);
  if (columns.cols() != block.size) throw DomainError("pointwise indices: column count mismatch");
  std::vector<double> s(static_cast<std::size_t>(block.size));
  for (int i = 0; i < block.size; ++i) {
    // ||e_k^i||_Theta = sqrt(w_k^i)
    s[static_cast<std::size_t>(i)] = mass_norm(columns.col(i)) / std::sqrt(block.norm_weights[i]);
  }
  return s;
}

std::vector<double> SensitivityOperator::pointwise_indices(int k) const {
  return pointwise_from_columns(k, block_columns(k));
}

GeneralizedIndex SensitivityOperator::generalized_index(int k) const {
  const auto& params = problem_->params();
  const auto& block = params.block(k);
  std::mt19937_64 rng(options_.seed + static_cast<unsigned long long>(k));
  auto gram = [&](const Vector& x) {
    const Vector y = apply_D(params.extend(x, k));
    return Vector(params.restrict_to(apply_Dt(problem_->mass_apply(y)), k));
  };
  return power_iteration(block.norm_weights, gram, rng, options_.power_tol, options_.power_max_iterations);
}

GeneralizedIndex SensitivityOperator::generalized_from_columns(int k, const Matrix& columns) const {
  const auto& block = problem_->params().block(k);
  if (columns.cols() != block.size) throw DomainError("generalized index: column count mismatch");
  Matrix mc(columns.rows(), columns.cols());
  for (Eigen::Index i = 0; i < columns.cols(); ++i) mc.col(i) = problem_->mass_apply(columns.col(i));
  // symmetric form N^{-1/2} C^T M C N^{-1/2}
  const Vector inv_sqrt = block.norm_weights.array().rsqrt();
  Matrix g = inv_sqrt.asDiagonal() * (columns.transpose() * mc) * inv_sqrt.asDiagonal();
  g = 0.5 * (g + g.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  if (eig.info() != Eigen::Success) throw SolverError("generalized index: eigensolver failed");
  const auto top = g.rows() - 1;
  const double lambda = std::max(0.0, eig.eigenvalues()[top]);
  GeneralizedIndex out;
  out.method = "dense gram eigensolver";
  out.value = std::sqrt(lambda);
  out.iterations = 0;
  out.converged = true;
  Vector x = inv_sqrt.cwiseProduct(eig.eigenvectors().col(top));
  // fix the sign so the largest-magnitude entry is positive
  Eigen::Index imax = 0;
  x.cwiseAbs().maxCoeff(&imax);
  if (x[imax] < 0.0) x = -x;
  out.direction = x / std::sqrt((block.norm_weights.array() * x.array().square()).sum());
  const Vector gx = inv_sqrt.cwiseProduct(g * eig.eigenvectors().col(top));
  out.residual = lambda > 0.0 ? (gx - lambda * inv_sqrt.cwiseProduct(eig.eigenvectors().col(top))).norm() / lambda
                              : 0.0;
  return out;
}

SensitivityReport SensitivityOperator::full_report() const {
  const auto& params = problem_->params();
  SensitivityReport report;
  report.hessian = problem_->hessian_label();
  report.hessian_solver = to_string(uses_dense_hessian() ? HessianSolver::kDense : HessianSolver::kCg);
  report.solution_norm = mass_norm(problem_->solution());
  report.cg_rtol = options_.cg_rtol;
  report.power_tol = options_.power_tol;
  report.seed = options_.seed;
  for (int k = 0; k < params.num_blocks(); ++k) {
    const auto& block = params.block(k);
    std::vector<int> iterations;
    const Matrix columns = block_columns(k, &iterations);
    for (int it : iterations) report.total_cg_iterations += it;
    BlockReport br;
    br.name = block.name;
    br.kind = block.kind;
    br.size = block.size;
    br.scale = block.scale;
    br.norm_label = block.norm_label;
    br.entries = block.entries;
    br.pointwise = pointwise_from_columns(k, columns);
    br.generalized = generalized_from_columns(k, columns);
    br.response = columns * br.generalized.direction;
    report.apply_D_calls += block.size;
    report.blocks.push_back(std::move(br));
  }
  return report;
}

}  // namespace hdsa
