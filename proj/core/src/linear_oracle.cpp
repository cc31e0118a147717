#include "hdsa/linear_oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "hdsa/errors.hpp"

namespace hdsa {

Vector DenseLinearProblem::weights() const { return sigma.array().square().inverse().matrix(); }

Matrix DenseLinearProblem::hessian() const {
  return A.transpose() * weights().asDiagonal() * A + alpha * R;
}

void DenseLinearProblem::validate() const {
  const auto n = A.rows();
  const auto p = A.cols();
  if (n == 0 || p == 0) throw DomainError("linear problem: empty forward matrix");
  if (sigma.size() != n || y_nominal.size() != n) throw DomainError("linear problem: data length mismatch");
  if (R.rows() != p || R.cols() != p) throw DomainError("linear problem: R must be p x p");
  if ((sigma.array() <= 0.0).any()) throw DomainError("linear problem: noise levels must be positive");
  if (!(alpha > 0.0)) throw DomainError("linear problem: alpha must be positive");
  if ((R - R.transpose()).norm() > 1e-12 * std::max(1.0, R.norm())) {
    throw DomainError("linear problem: R must be symmetric");
  }
  Eigen::LLT<Matrix> llt(hessian());
  if (llt.info() != Eigen::Success) throw DomainError("linear problem: Hessian is not positive definite");
}

namespace {

Eigen::LLT<Matrix> factor(const DenseLinearProblem& problem) {
  problem.validate();
  return Eigen::LLT<Matrix>(problem.hessian());
}

}  // namespace

Vector solve_linear(const DenseLinearProblem& problem) {
  return solve_linear(problem, Vector::Zero(problem.data_size()));
}

Vector solve_linear(const DenseLinearProblem& problem, const Vector& theta) {
  if (theta.size() != problem.data_size()) throw DomainError("linear problem: theta length mismatch");
  const Vector y = problem.y_nominal.cwiseProduct((1.0 + theta.array()).matrix());
  return factor(problem).solve(problem.A.transpose() * problem.weights().cwiseProduct(y));
}

Matrix dense_D(const DenseLinearProblem& problem) {
  const Matrix rhs =
      problem.A.transpose() * problem.weights().cwiseProduct(problem.y_nominal).asDiagonal();
  return factor(problem).solve(rhs);
}

Prop1Check verify_prop1(const DenseLinearProblem& problem) {
  const Matrix D = dense_D(problem);
  const Vector var = problem.sigma.array().square();
  Prop1Check out;
  out.trace = (D * var.asDiagonal() * D.transpose()).trace();
  for (Eigen::Index i = 0; i < D.cols(); ++i) {
    // ||e_i|| in the Sigma^{-1} weighted norm is 1 / sigma_i
    const double s = D.col(i).norm() * problem.sigma[i];
    out.sum_of_squares += s * s;
  }
  out.gap = out.trace > 0.0 ? std::abs(out.trace - out.sum_of_squares) / out.trace
                            : std::abs(out.trace - out.sum_of_squares);
  return out;
}

double condition_number(const Matrix& spd) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(spd, Eigen::EigenvaluesOnly);
  const Vector& ev = eig.eigenvalues();
  if (ev[0] <= 0.0) return std::numeric_limits<double>::infinity();
  return ev[ev.size() - 1] / ev[0];
}

DenseLinearProblem random_linear_problem(std::mt19937_64& rng, int n, int p, double max_condition) {
  if (n <= 0 || p <= 0) throw DomainError("random linear problem: sizes must be positive");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.5, 2.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    DenseLinearProblem prob;
    prob.A.resize(n, p);
    for (int j = 0; j < p; ++j) {
      for (int i = 0; i < n; ++i) prob.A(i, j) = normal(rng);
    }
    Matrix L(p, p);
    for (int j = 0; j < p; ++j) {
      for (int i = 0; i < p; ++i) L(i, j) = normal(rng);
    }
    prob.R = L * L.transpose() / p + 0.1 * Matrix::Identity(p, p);
    prob.alpha = uniform(rng);
    prob.y_nominal.resize(n);
    for (int i = 0; i < n; ++i) prob.y_nominal[i] = uniform(rng);
    prob.sigma = 0.03 * prob.y_nominal.cwiseAbs();
    if (condition_number(prob.hessian()) <= max_condition) return prob;
  }
  throw SolverError("random linear problem: no instance met the condition-number guard");
}

}  // namespace hdsa
