#pragma once

// Dense linear least-squares problem
//
//   min_m 1/2 ||A m - y||_W^2 + alpha/2 m^T R m,   W = Sigma^{-1},
//   y = y_nominal (1 + theta)
//
// with closed forms for the minimizer, the sensitivity operator and the
// covariance of m* under theta ~ N(0, Sigma).

#include <random>

#include "hdsa/grid_fem.hpp"

namespace hdsa {

struct DenseLinearProblem {
  Matrix A;          // n x p
  Vector sigma;      // noise standard deviations, length n
  Matrix R;          // p x p, symmetric positive definite
  double alpha = 1.0;
  Vector y_nominal;  // length n

  int data_size() const { return static_cast<int>(A.rows()); }
  int param_size() const { return static_cast<int>(A.cols()); }
  /// Diagonal of W = Sigma^{-1}.
  Vector weights() const;
  /// A^T W A + alpha R.
  Matrix hessian() const;
  /// Throws DomainError on shape mismatch, non-positive sigma or alpha, an
  /// asymmetric R, or a Hessian that is not positive definite.
  void validate() const;
};

/// m* = (A^T W A + alpha R)^{-1} A^T W y_nominal.
Vector solve_linear(const DenseLinearProblem& problem);
/// m* for perturbed data y_nominal (1 + theta).
Vector solve_linear(const DenseLinearProblem& problem, const Vector& theta);

/// D = (A^T W A + alpha R)^{-1} A^T W diag(y_nominal), p x n.
Matrix dense_D(const DenseLinearProblem& problem);

struct Prop1Check {
  double trace = 0.0;           // Tr(D Sigma D^T)
  double sum_of_squares = 0.0;  // sum_i (||D e_i|| / ||e_i||_{Sigma^{-1}})^2
  double gap = 0.0;             // |trace - sum_of_squares| / trace
};

Prop1Check verify_prop1(const DenseLinearProblem& problem);

/// Random instance with Gaussian A, positive data, sigma = 0.03 |y| and a
/// random SPD R. Draws are repeated until cond(H) <= max_condition.
DenseLinearProblem random_linear_problem(std::mt19937_64& rng, int n, int p, double max_condition = 1e8);

double condition_number(const Matrix& spd);

}  // namespace hdsa
