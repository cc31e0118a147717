#include "hdsa/inverse_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hdsa/errors.hpp"

namespace hdsa {

namespace {

struct SteihaugResult {
  Vector step;
  int iterations = 0;
  std::string exit;
  bool on_boundary = false;
};

/// Positive tau with ||z + tau d||_P = radius.
double boundary_tau(double zz, double zd, double dd, double radius) {
  const double disc = std::max(0.0, zd * zd + dd * (radius * radius - zz));
  return (-zd + std::sqrt(disc)) / dd;
}

SteihaugResult steihaug(const TrustRegionFunctions& f, const TrustRegionPoint& point, HessianMode mode,
                        double radius, double rtol, int max_iterations) {
  const Vector& g = point.gradient;
  SteihaugResult out;
  out.step = Vector::Zero(g.size());
  Vector r = g;
  Vector y = f.precondition(r);
  double ry = r.dot(y);
  const double stop = rtol * std::sqrt(std::max(ry, 0.0));
  Vector d = -y;
  // P-inner products of the iterate and direction, kept by recurrence
  double zz = 0.0;
  double zd = 0.0;
  double dd = ry;
  for (int it = 0; it < max_iterations; ++it) {
    const Vector hd = point.hess_vec(d, mode);
    const double curvature = d.dot(hd);
    out.iterations = it + 1;
    if (curvature <= 0.0) {
      out.step += boundary_tau(zz, zd, dd, radius) * d;
      out.exit = "negative curvature";
      out.on_boundary = true;
      return out;
    }
    const double alpha = ry / curvature;
    const double zz_next = zz + 2.0 * alpha * zd + alpha * alpha * dd;
    if (zz_next >= radius * radius) {
      out.step += boundary_tau(zz, zd, dd, radius) * d;
      out.exit = "trust region boundary";
      out.on_boundary = true;
      return out;
    }
    out.step += alpha * d;
    zz = zz_next;
    zd = zd + alpha * dd;
    r += alpha * hd;
    y = f.precondition(r);
    const double ry_next = r.dot(y);
    if (std::sqrt(std::max(ry_next, 0.0)) <= stop) {
      out.exit = "converged";
      return out;
    }
    const double beta = ry_next / ry;
    ry = ry_next;
    d = -y + beta * d;
    zd = beta * zd;
    dd = ry + beta * beta * dd;
  }
  out.exit = "iteration cap";
  return out;
}

HessianMode pick_mode(const OptimizerConfig& config, double relative_gradient) {
  switch (config.inner_hessian) {
    case InnerHessian::kFull:
      return HessianMode::kFull;
    case InnerHessian::kGaussNewton:
      return HessianMode::kGaussNewton;
    case InnerHessian::kAuto:
      break;
  }
  return relative_gradient > config.gauss_newton_switch ? HessianMode::kGaussNewton : HessianMode::kFull;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(gradient_rtol > 0.0)) throw ConfigError("optimizer.gradient_rtol must be positive");
  if (max_iterations <= 0) throw ConfigError("optimizer.max_iterations must be positive");
  if (!(cg_rtol > 0.0) || cg_rtol >= 1.0) throw ConfigError("optimizer.cg_rtol must lie in (0, 1)");
  if (!(cg_forcing_power > 0.0)) throw ConfigError("optimizer.cg_forcing_power must be positive");
  if (cg_max_iterations <= 0) throw ConfigError("optimizer.cg_max_iterations must be positive");
  if (!(initial_radius > 0.0)) throw ConfigError("optimizer.initial_radius must be positive");
  if (!(max_radius >= initial_radius)) throw ConfigError("optimizer.max_radius must be at least initial_radius");
  if (!(acceptance > 0.0) || acceptance >= 0.25) throw ConfigError("optimizer.acceptance must lie in (0, 0.25)");
  if (!(gauss_newton_switch > 0.0)) throw ConfigError("optimizer.gauss_newton_switch must be positive");
}

TrustRegionResult minimize_trust_region(const TrustRegionFunctions& f, const Vector& x0,
                                        const OptimizerConfig& config, double reference_gradient_norm) {
  config.validate();
  TrustRegionResult result;
  result.x = x0;
  TrustRegionPoint point = f.evaluate(x0);
  auto dual_norm = [&](const Vector& g) { return std::sqrt(std::max(0.0, g.dot(f.precondition(g)))); };
  double gnorm = dual_norm(point.gradient);
  const double ref = reference_gradient_norm > 0.0 ? reference_gradient_norm : gnorm;
  result.reference_gradient_norm = ref;
  double radius = config.initial_radius;

  auto relative = [&](double gn) { return ref > 0.0 ? gn / ref : 0.0; };
  int iteration = 0;
  while (true) {
    const double rel = relative(gnorm);
    if (rel <= config.gradient_rtol || gnorm == 0.0) {
      result.converged = true;
      result.message = "relative gradient below tolerance";
      break;
    }
    if (iteration >= config.max_iterations) {
      result.message = "maximum iterations reached";
      break;
    }
    ++iteration;
    const HessianMode mode = pick_mode(config, rel);
    const double forcing = std::min(config.cg_rtol, std::pow(rel, config.cg_forcing_power));
    const SteihaugResult s = steihaug(f, point, mode, radius, forcing, config.cg_max_iterations);
    const Vector hs = point.hess_vec(s.step, mode);
    const double predicted = -(point.gradient.dot(s.step) + 0.5 * s.step.dot(hs));
    TrustRegionPoint trial = f.evaluate(result.x + s.step);
    const double actual = point.value - trial.value;
    // shift both reductions by a few ulps of J so that steps at round-off level are judged by the model
    const double slack = 10.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(point.value));
    const double ratio = predicted > 0.0 ? (actual + slack) / (predicted + slack) : -1.0;
    const double step_norm = std::sqrt(std::max(0.0, s.step.dot(f.metric(s.step))));

    IterationRecord rec;
    rec.iteration = iteration;
    rec.radius = radius;
    rec.cg_iterations = s.iterations;
    rec.cg_exit = s.exit;
    rec.hessian = to_string(mode);
    rec.step_norm = step_norm;
    rec.ratio = ratio;
    rec.accepted = ratio > config.acceptance && actual >= -slack;

    if (ratio < 0.25) {
      radius = 0.25 * std::min(radius, step_norm);
    } else if (ratio > 0.75 && s.on_boundary) {
      radius = std::min(2.0 * radius, config.max_radius);
    }
    if (rec.accepted) {
      result.x += s.step;
      point = std::move(trial);
      gnorm = dual_norm(point.gradient);
    }
    rec.objective = point.value;
    rec.gradient_norm = gnorm;
    rec.relative_gradient = relative(gnorm);
    result.log.push_back(rec);

    if (!rec.accepted && radius < 1e-14 * std::max(1.0, std::sqrt(result.x.dot(f.metric(result.x))))) {
      result.message = "trust region collapsed";
      break;
    }
  }
  result.iterations = iteration;
  result.value = point.value;
  result.gradient_norm = gnorm;
  result.relative_gradient = relative(gnorm);
  return result;
}

double gradient_norm(const InverseProblem& problem, const Vector& g) {
  return std::sqrt(std::max(0.0, g.dot(problem.precondition(g))));
}

double reference_gradient_norm(const InverseProblem& problem, const Vector& theta) {
  return gradient_norm(problem, problem.gradient(Vector::Zero(problem.inversion_dim()), theta));
}

TrustRegionResult solve_inverse(const InverseProblem& problem, const Vector& theta, const Vector& m0,
                                const OptimizerConfig& config, double reference) {
  if (m0.size() != problem.inversion_dim()) throw DomainError("initial guess has the wrong size");
  if (reference <= 0.0) reference = reference_gradient_norm(problem, theta);
  TrustRegionFunctions f;
  f.evaluate = [&](const Vector& m) {
    auto lin = std::make_shared<Linearization>(problem.linearize(m, theta));
    TrustRegionPoint p;
    p.value = lin->objective();
    p.gradient = lin->gradient();
    p.hess_vec = [lin](const Vector& v, HessianMode mode) { return lin->hess_vec(v, mode); };
    return p;
  };
  f.precondition = [&](const Vector& r) { return problem.precondition(r); };
  f.metric = [&](const Vector& s) { return Vector(problem.preconditioner_matrix() * s); };
  return minimize_trust_region(f, m0, config, reference);
}

StationarityCertificate check_stationarity(const InverseProblem& problem, const Vector& m, const Vector& theta,
                                           double reference, double threshold, HessianMode mode,
                                           int probe_iterations) {
  StationarityCertificate cert;
  cert.threshold = threshold;
  cert.hessian = mode;
  const Linearization lin = problem.linearize(m, theta);
  cert.gradient_norm = gradient_norm(problem, lin.gradient());
  cert.reference_gradient_norm = reference;
  cert.relative_gradient = reference > 0.0 ? cert.gradient_norm / reference
                                           : std::numeric_limits<double>::infinity();

  const SparseMatrix& P = problem.preconditioner_matrix();
  Vector r = P * Vector::Ones(problem.inversion_dim());
  Vector y = problem.precondition(r);
  double ry = r.dot(y);
  Vector d = y;
  cert.min_curvature = std::numeric_limits<double>::infinity();
  for (int it = 0; it < probe_iterations && ry > 0.0; ++it) {
    const Vector hd = lin.hess_vec(d, mode);
    const double dhd = d.dot(hd);
    const double dpd = d.dot(P * d);
    cert.probe_iterations = it + 1;
    cert.min_curvature = std::min(cert.min_curvature, dhd / dpd);
    if (dhd <= 0.0) break;
    const double alpha = ry / dhd;
    r -= alpha * hd;
    y = problem.precondition(r);
    const double ry_next = r.dot(y);
    d = y + (ry_next / ry) * d;
    ry = ry_next;
  }
  return cert;
}

std::string to_string(InnerHessian mode) {
  switch (mode) {
    case InnerHessian::kAuto:
      return "auto";
    case InnerHessian::kFull:
      return "full";
    case InnerHessian::kGaussNewton:
      return "gauss-newton";
  }
  return "unknown";
}

std::string to_string(HessianMode mode) { return mode == HessianMode::kFull ? "full" : "gauss-newton"; }

}  // namespace hdsa
