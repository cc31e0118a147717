#include "hdsa/inverse_problem.hpp"

#include <optional>
#include <string>

#include "hdsa/errors.hpp"
#include "hdsa/fem_kernels.hpp"

namespace hdsa {

namespace {

enum BlockIndex { kPressureData = 0, kConcentrationData, kSource, kDiffusion, kBcLeft, kBcRight };

using fem::QuadField;

}  // namespace

struct Linearization::State {
  const InverseProblem* problem = nullptr;
  Vector m;
  Vector theta;
  AuxiliaryParams aux;
  Vector expm;
  std::optional<PressureSystem> pressure_system;
  Vector p;
  QuadField kappa, gpx, gpy;
  QuadVelocity v;
  double eps = 0.0;
  std::optional<TransportSystem> transport_system;
  std::vector<Vector> c;
  Vector d, y, r;
  double misfit = 0.0;
  double regularization = 0.0;
  // adjoint
  std::vector<Vector> lambda;  // lambda[j] for j = 1..nt; lambda[0] and lambda[nt + 1] stay zero
  Vector mu;
  QuadField zx, zy;  // transport-to-velocity coupling at quadrature points
  QuadField fx, fy;  // w grad(mu) - z
  Vector grad;
  // observation time index of each step, -1 when unobserved
  std::vector<int> obs_of_step;
};

struct Linearization::Tangent {
  Vector dcoef;  // e^m * dm
  QuadField kappa;
  Vector p;
  QuadField gpx, gpy;
  QuadVelocity v;
  double eps = 0.0;
  std::vector<Vector> c;
  Vector d;
};

namespace {

struct AdjointFields {
  std::vector<Vector> lambda;
  Vector mu;
  QuadField zx, zy, fx, fy;
  Vector hp;
};

Vector concentration_residual(const SensorLayout& sensors, const Vector& r, int t) {
  Vector out(sensors.num_concentration());
  for (int s = 0; s < sensors.num_concentration(); ++s) out[s] = r[sensors.concentration_index(s, t)];
  return out;
}

QuadField zeros_like(const QuadField& f) { return QuadField(f.size(), 0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// InverseProblem

InverseProblem::InverseProblem(std::shared_ptr<const ForwardModel> model, ObjectiveSpec spec, Vector observed)
    : model_(std::move(model)),
      spec_(spec),
      observed_(std::move(observed)),
      counters_(std::make_shared<SolveCounters>()) {
  const auto& sensors = model_->sensors();
  if (observed_.size() != sensors.data_size()) {
    throw DomainError("observed data has length " + std::to_string(observed_.size()) + ", layout needs " +
                      std::to_string(sensors.data_size()));
  }
  if (!(spec_.sigma > 0.0)) throw DomainError("objective noise level sigma must be positive");
  if (spec_.alpha < 0.0 || spec_.l2_shift < 0.0) throw DomainError("regularization weights must be nonnegative");
  const int np = sensors.num_pressure();
  const int nc = sensors.data_size() - np;
  if (np > 0) pressure_mean_ = observed_.head(np).mean();
  if (nc > 0) concentration_mean_ = observed_.tail(nc).mean();
  if ((np > 0 && !(pressure_mean_ > 0.0)) || (nc > 0 && !(concentration_mean_ > 0.0))) {
    throw DomainError("data block means must be strictly positive to form the misfit weights");
  }
  weights_.resize(observed_.size());
  const double s2 = spec_.sigma * spec_.sigma;
  weights_.head(np).setConstant(np > 0 ? 1.0 / (pressure_mean_ * pressure_mean_ * s2) : 0.0);
  weights_.tail(nc).setConstant(nc > 0 ? 1.0 / (concentration_mean_ * concentration_mean_ * s2) : 0.0);

  const auto& K = model_->stiffness().matrix;
  const auto& M = model_->mass().matrix;
  if (spec_.alpha > 0.0) {
    preconditioner_ = spec_.alpha * K + (spec_.alpha + spec_.l2_shift) * M;
  } else {
    preconditioner_ = K + M;
  }
  preconditioner_solver_ = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(preconditioner_);
  build_params();
}

void InverseProblem::build_params() {
  const auto& sensors = model_->sensors();
  const auto& time = model_->time();
  const int np = sensors.num_pressure();
  const int nc = sensors.num_concentration();
  const int nt = sensors.num_times();

  ParamBlock pressure;
  pressure.name = "pressure_data";
  pressure.kind = BlockKind::kExperimental;
  pressure.size = np;
  pressure.scale = spec_.experimental_scale;
  pressure.norm_weights = spatial_weights(np);
  pressure.norm_label = "mean-square over sensors";
  for (int s = 0; s < np; ++s) {
    EntryInfo e;
    e.sensor = s;
    e.x = sensors.pressure[static_cast<std::size_t>(s)].x;
    e.y = sensors.pressure[static_cast<std::size_t>(s)].y;
    pressure.entries.push_back(e);
  }
  params_.add_block(std::move(pressure));

  ParamBlock conc;
  conc.name = "concentration_data";
  conc.kind = BlockKind::kExperimental;
  conc.size = nc * nt;
  conc.scale = spec_.experimental_scale;
  conc.norm_weights = spatiotemporal_weights(nc, nt);
  conc.norm_label = "mean-square over sensors and times";
  for (int s = 0; s < nc; ++s) {
    for (int t = 0; t < nt; ++t) {
      EntryInfo e;
      e.sensor = s;
      e.time_index = t;
      e.time = time.time(sensors.observation_steps[static_cast<std::size_t>(t)]);
      e.x = sensors.concentration[static_cast<std::size_t>(s)].x;
      e.y = sensors.concentration[static_cast<std::size_t>(s)].y;
      conc.entries.push_back(e);
    }
  }
  params_.add_block(std::move(conc));

  ParamBlock source;
  source.name = "source";
  source.size = model_->num_source_params();
  source.scale = spec_.auxiliary_scale;
  source.norm_weights = spatial_weights(source.size);
  source.norm_label = "mean-square over well patch nodes";
  for (int k = 0; k < source.size; ++k) {
    EntryInfo e;
    e.well = k / AuxiliaryParams::kLocalPerWell;
    e.local = k % AuxiliaryParams::kLocalPerWell;
    const Point p = model_->source_param_location(k);
    e.x = p.x;
    e.y = p.y;
    source.entries.push_back(e);
  }
  params_.add_block(std::move(source));

  ParamBlock diffusion;
  diffusion.name = "diffusion";
  diffusion.size = 1;
  diffusion.scale = spec_.auxiliary_scale;
  diffusion.norm_weights = Vector::Ones(1);
  diffusion.norm_label = "scalar";
  params_.add_block(std::move(diffusion));

  const int nb = model_->num_boundary_params();
  for (int side = 0; side < 2; ++side) {
    ParamBlock bc;
    bc.name = side == 0 ? "bc_left" : "bc_right";
    bc.size = nb;
    bc.scale = spec_.auxiliary_scale;
    bc.norm_weights = spatial_weights(nb);
    bc.norm_label = "mean-square over boundary nodes";
    for (int j = 0; j < nb; ++j) {
      EntryInfo e;
      e.boundary_node = j;
      e.x = side == 0 ? 0.0 : 1.0;
      e.y = static_cast<double>(j) / (nb - 1);
      bc.entries.push_back(e);
    }
    params_.add_block(std::move(bc));
  }
}

AuxiliaryParams InverseProblem::auxiliary(const Vector& theta) const {
  if (theta.size() != params_.size()) throw DomainError("theta has the wrong size");
  AuxiliaryParams aux = AuxiliaryParams::nominal(model_->config(), spec_.auxiliary_scale);
  aux.source = params_.restrict_to(theta, kSource);
  aux.diffusion = theta[params_.block(kDiffusion).offset];
  aux.bc_left = params_.restrict_to(theta, kBcLeft);
  aux.bc_right = params_.restrict_to(theta, kBcRight);
  return aux;
}

Vector InverseProblem::data(const Vector& theta) const {
  if (theta.size() != params_.size()) throw DomainError("theta has the wrong size");
  Vector y = observed_;
  for (int k : {static_cast<int>(kPressureData), static_cast<int>(kConcentrationData)}) {
    const auto& b = params_.block(k);
    y.segment(b.offset, b.size).array() *= 1.0 + b.scale * theta.segment(b.offset, b.size).array();
  }
  return y;
}

double InverseProblem::regularization(const Vector& m) const {
  return 0.5 * spec_.alpha * m.dot(model_->stiffness().matrix * m) +
         0.5 * spec_.l2_shift * m.dot(model_->mass().matrix * m);
}

Vector InverseProblem::regularization_gradient(const Vector& m) const {
  Vector g = spec_.alpha * (model_->stiffness().matrix * m);
  if (spec_.l2_shift != 0.0) g += spec_.l2_shift * (model_->mass().matrix * m);
  return g;
}

Vector InverseProblem::precondition(const Vector& r) const { return preconditioner_solver_->solve(r); }

double InverseProblem::mass_inner(const Vector& a, const Vector& b) const {
  return a.dot(model_->mass().matrix * b);
}

double InverseProblem::mass_norm(const Vector& a) const { return std::sqrt(std::max(0.0, mass_inner(a, a))); }

double InverseProblem::objective(const Vector& m, const Vector& theta) const {
  const AuxiliaryParams aux = auxiliary(theta);
  const Vector d = model_->predict_observations(m, aux);
  counters_->forward_solves++;
  const Vector res = d - data(theta);
  return 0.5 * res.dot(weights_.cwiseProduct(res)) + regularization(m);
}

Vector InverseProblem::gradient(const Vector& m, const Vector& theta) const {
  return linearize(m, theta).gradient();
}

namespace {

AdjointFields adjoint_sweep(const Linearization::State& s, const Vector& r) {
  const InverseProblem& problem = *s.problem;
  const ForwardModel& model = problem.model();
  const auto& mesh = model.mesh();
  const auto& quad = model.quadrature();
  const auto& sensors = model.sensors();
  const auto& M = model.mass().matrix;
  const auto& Qc = model.concentration_observer();
  const auto& Qp = model.pressure_observer();
  const int nt = model.time().steps;
  const double dt = model.time().dt();

  AdjointFields a;
  a.lambda.assign(static_cast<std::size_t>(nt) + 2, Vector::Zero(mesh.num_nodes()));
  a.zx = zeros_like(s.kappa);
  a.zy = zeros_like(s.kappa);
  QuadField gcx, gcy;
  for (int j = nt; j >= 1; --j) {
    Vector rhs = M * a.lambda[static_cast<std::size_t>(j) + 1];
    const int t = s.obs_of_step[static_cast<std::size_t>(j)];
    if (t >= 0) rhs -= Qc.transpose() * concentration_residual(sensors, r, t);
    a.lambda[static_cast<std::size_t>(j)] = s.transport_system->solve_transpose(rhs);
    const QuadField lq = fem::values_at_quadrature(mesh, quad, a.lambda[static_cast<std::size_t>(j)]);
    fem::gradient_at_quadrature(mesh, quad, s.c[static_cast<std::size_t>(j)], gcx, gcy);
    for (std::size_t k = 0; k < lq.size(); ++k) {
      a.zx[k] += dt * quad.weight * lq[k] * gcx[k];
      a.zy[k] += dt * quad.weight * lq[k] * gcy[k];
    }
  }
  if (problem.fault() == AdjointFault::kFlipTransportCoupling) {
    for (auto& z : a.zx) z = -z;
    for (auto& z : a.zy) z = -z;
  }
  QuadField kzx(a.zx.size()), kzy(a.zy.size());
  for (std::size_t k = 0; k < a.zx.size(); ++k) {
    kzx[k] = s.kappa[k] * a.zx[k];
    kzy[k] = s.kappa[k] * a.zy[k];
  }
  a.hp = Vector::Zero(mesh.num_nodes());
  fem::scatter_gradient(mesh, quad, kzx, kzy, a.hp);
  a.hp = -a.hp;
  const Vector rp = r.head(sensors.num_pressure());
  a.mu = s.pressure_system->solve_homogeneous(-(Qp.transpose() * rp + a.hp));
  QuadField gmx, gmy;
  fem::gradient_at_quadrature(mesh, quad, a.mu, gmx, gmy);
  a.fx.resize(gmx.size());
  a.fy.resize(gmy.size());
  for (std::size_t k = 0; k < gmx.size(); ++k) {
    a.fx[k] = quad.weight * gmx[k] - a.zx[k];
    a.fy[k] = quad.weight * gmy[k] - a.zy[k];
  }
  return a;
}

/// e^m * sum_q N (f . grad p): derivative of the constraint terms with respect to m.
Vector coefficient_gradient(const Linearization::State& s, const QuadField& fx, const QuadField& fy,
                            const QuadField& gpx, const QuadField& gpy) {
  const auto& model = s.problem->model();
  QuadField dot(fx.size());
  for (std::size_t k = 0; k < fx.size(); ++k) dot[k] = fx[k] * gpx[k] + fy[k] * gpy[k];
  Vector out = Vector::Zero(model.mesh().num_nodes());
  fem::scatter_shape(model.mesh(), model.quadrature(), dot, out);
  return out;
}

Vector mask_dirichlet(const std::vector<char>& mask, const Vector& v) {
  Vector out = Vector::Zero(v.size());
  for (std::size_t n = 0; n < mask.size(); ++n) {
    if (mask[n]) out[static_cast<Eigen::Index>(n)] = v[static_cast<Eigen::Index>(n)];
  }
  return out;
}

}  // namespace

Linearization InverseProblem::linearize(const Vector& m, const Vector& theta) const {
  if (m.size() != inversion_dim()) throw DomainError("m has the wrong size");
  auto s = std::make_shared<Linearization::State>();
  s->problem = this;
  s->m = m;
  s->theta = theta;
  s->aux = auxiliary(theta);
  s->expm = m.array().exp().matrix();

  const auto& mesh = model_->mesh();
  const auto& quad = model_->quadrature();
  const int nt = model_->time().steps;

  // forward
  s->pressure_system.emplace(model_->pressure_system(m));
  s->p = s->pressure_system->solve(Vector::Zero(mesh.num_nodes()), model_->dirichlet_values(s->aux));
  s->kappa = fem::values_at_quadrature(mesh, quad, s->expm);
  fem::gradient_at_quadrature(mesh, quad, s->p, s->gpx, s->gpy);
  s->v.vx.resize(s->kappa.size());
  s->v.vy.resize(s->kappa.size());
  for (std::size_t k = 0; k < s->kappa.size(); ++k) {
    s->v.vx[k] = -s->kappa[k] * s->gpx[k];
    s->v.vy[k] = -s->kappa[k] * s->gpy[k];
  }
  s->eps = model_->diffusivity(s->aux);
  s->transport_system.emplace(model_->transport_system(s->v, s->eps));
  const auto& M = model_->mass().matrix;
  const Vector load = model_->time().dt() * (M * model_->source(s->aux));
  s->c.assign(1, Vector::Zero(mesh.num_nodes()));
  for (int j = 1; j <= nt; ++j) s->c.push_back(s->transport_system->solve(M * s->c.back() + load));
  s->d = model_->observe(s->p, s->c);
  s->y = data(theta);
  const Vector res = s->d - s->y;
  s->r = weights_.cwiseProduct(res);
  s->misfit = 0.5 * res.dot(s->r);
  s->regularization = regularization(m);
  counters_->forward_solves++;

  s->obs_of_step.assign(static_cast<std::size_t>(nt) + 2, -1);
  const auto& steps = model_->sensors().observation_steps;
  for (std::size_t t = 0; t < steps.size(); ++t) s->obs_of_step[static_cast<std::size_t>(steps[t])] = static_cast<int>(t);

  // adjoint
  AdjointFields a = adjoint_sweep(*s, s->r);
  counters_->adjoint_solves++;
  s->lambda = std::move(a.lambda);
  s->mu = std::move(a.mu);
  s->zx = std::move(a.zx);
  s->zy = std::move(a.zy);
  s->fx = std::move(a.fx);
  s->fy = std::move(a.fy);
  s->grad = regularization_gradient(m) +
            s->expm.cwiseProduct(coefficient_gradient(*s, s->fx, s->fy, s->gpx, s->gpy));

  Linearization lin;
  lin.state_ = std::move(s);
  return lin;
}

// ---------------------------------------------------------------------------
// Linearization

const Vector& Linearization::m() const { return state_->m; }
const Vector& Linearization::theta() const { return state_->theta; }
double Linearization::objective() const { return state_->misfit + state_->regularization; }
double Linearization::misfit() const { return state_->misfit; }
const Vector& Linearization::gradient() const { return state_->grad; }
const Vector& Linearization::pressure() const { return state_->p; }
const std::vector<Vector>& Linearization::concentration() const { return state_->c; }
const Vector& Linearization::predictions() const { return state_->d; }

Vector Linearization::gradient_theta() const {
  const State& s = *state_;
  const InverseProblem& problem = *s.problem;
  const ForwardModel& model = problem.model();
  const auto& params = problem.params();
  const auto& M = model.mass().matrix;
  const auto& K1 = model.stiffness().matrix;
  const double dt = model.time().dt();
  const double a = problem.spec().auxiliary_scale;
  const int nt = model.time().steps;

  Vector g = params.zero();
  for (int k : {static_cast<int>(kPressureData), static_cast<int>(kConcentrationData)}) {
    const auto& b = params.block(k);
    g.segment(b.offset, b.size) =
        -b.scale * problem.observed().segment(b.offset, b.size).cwiseProduct(s.r.segment(b.offset, b.size));
  }
  Vector lambda_sum = Vector::Zero(M.rows());
  double diffusion = 0.0;
  for (int j = 1; j <= nt; ++j) {
    lambda_sum += s.lambda[static_cast<std::size_t>(j)];
    diffusion += s.lambda[static_cast<std::size_t>(j)].dot(K1 * s.c[static_cast<std::size_t>(j)]);
  }
  g.segment(params.block(kSource).offset, params.block(kSource).size) =
      -dt * a * (model.source_basis().transpose() * (M * lambda_sum));
  g[params.block(kDiffusion).offset] = dt * model.config().diffusivity * a * diffusion;

  Vector hp = Vector::Zero(M.rows());
  {
    QuadField kzx(s.zx.size()), kzy(s.zy.size());
    for (std::size_t k = 0; k < s.zx.size(); ++k) {
      kzx[k] = s.kappa[k] * s.zx[k];
      kzy[k] = s.kappa[k] * s.zy[k];
    }
    fem::scatter_gradient(model.mesh(), model.quadrature(), kzx, kzy, hp);
    hp = -hp;
  }
  const Vector rp = s.r.head(model.sensors().num_pressure());
  const Vector boundary = mask_dirichlet(
      model.dirichlet_mask(),
      model.pressure_observer().transpose() * rp + hp + s.pressure_system->stiffness() * s.mu);
  g.segment(params.block(kBcLeft).offset, params.block(kBcLeft).size) =
      a * (model.boundary_basis(DirichletSide::kLeft).transpose() * boundary);
  g.segment(params.block(kBcRight).offset, params.block(kBcRight).size) =
      a * (model.boundary_basis(DirichletSide::kRight).transpose() * boundary);
  return g;
}

Linearization::Tangent Linearization::forward_tangent(const Vector& dm, const Vector& dtheta) const {
  const State& s = *state_;
  const InverseProblem& problem = *s.problem;
  const ForwardModel& model = problem.model();
  const auto& params = problem.params();
  const auto& mesh = model.mesh();
  const auto& quad = model.quadrature();
  const auto& M = model.mass().matrix;
  const auto& K1 = model.stiffness().matrix;
  const double dt = model.time().dt();
  const double a = problem.spec().auxiliary_scale;
  const int nt = model.time().steps;

  if (dm.size() != mesh.num_nodes() || dtheta.size() != params.size()) {
    throw DomainError("tangent direction has the wrong size");
  }

  Tangent t;
  t.dcoef = s.expm.cwiseProduct(dm);
  t.kappa = fem::values_at_quadrature(mesh, quad, t.dcoef);
  const Vector dirichlet =
      a * (model.boundary_basis(DirichletSide::kLeft) * params.restrict_to(dtheta, kBcLeft) +
           model.boundary_basis(DirichletSide::kRight) * params.restrict_to(dtheta, kBcRight));
  t.p = s.pressure_system->solve(-fem::apply_diffusion(mesh, quad, t.dcoef, s.p), dirichlet);
  fem::gradient_at_quadrature(mesh, quad, t.p, t.gpx, t.gpy);
  t.v.vx.resize(t.kappa.size());
  t.v.vy.resize(t.kappa.size());
  for (std::size_t k = 0; k < t.kappa.size(); ++k) {
    t.v.vx[k] = -t.kappa[k] * s.gpx[k] - s.kappa[k] * t.gpx[k];
    t.v.vy[k] = -t.kappa[k] * s.gpy[k] - s.kappa[k] * t.gpy[k];
  }
  t.eps = model.config().diffusivity * a * dtheta[params.block(kDiffusion).offset];
  const Vector load = dt * (M * (a * (model.source_basis() * params.restrict_to(dtheta, kSource))));
  t.c.assign(1, Vector::Zero(mesh.num_nodes()));
  for (int j = 1; j <= nt; ++j) {
    const Vector& cj = s.c[static_cast<std::size_t>(j)];
    Vector rhs = M * t.c.back() + load - dt * fem::apply_advection(mesh, quad, t.v, cj);
    if (t.eps != 0.0) rhs -= (dt * t.eps) * (K1 * cj);
    t.c.push_back(s.transport_system->solve(rhs));
  }
  t.d = model.observe(t.p, t.c);
  problem.counters().incremental_forward_solves++;
  return t;
}

Vector Linearization::adjoint_tangent(const Tangent& t, const Vector& dm, const Vector& dtheta,
                                      bool want_theta) const {
  const State& s = *state_;
  const InverseProblem& problem = *s.problem;
  const ForwardModel& model = problem.model();
  const auto& params = problem.params();
  const auto& mesh = model.mesh();
  const auto& quad = model.quadrature();
  const auto& sensors = model.sensors();
  const auto& M = model.mass().matrix;
  const auto& K1 = model.stiffness().matrix;
  const double dt = model.time().dt();
  const double a = problem.spec().auxiliary_scale;
  const int nt = model.time().steps;

  // r_hat = W (d_hat - y_hat)
  Vector dy = Vector::Zero(t.d.size());
  for (int k : {static_cast<int>(kPressureData), static_cast<int>(kConcentrationData)}) {
    const auto& b = params.block(k);
    dy.segment(b.offset, b.size) =
        b.scale * problem.observed().segment(b.offset, b.size).cwiseProduct(dtheta.segment(b.offset, b.size));
  }
  const Vector rhat = problem.weights().cwiseProduct(t.d - dy);

  std::vector<Vector> lhat(static_cast<std::size_t>(nt) + 2, Vector::Zero(mesh.num_nodes()));
  QuadField zhx = zeros_like(s.kappa), zhy = zeros_like(s.kappa);
  QuadField gcx, gcy, ghx, ghy;
  const bool eps_tangent = t.eps != 0.0;
  for (int j = nt; j >= 1; --j) {
    const auto sj = static_cast<std::size_t>(j);
    Vector rhs = M * lhat[sj + 1] - dt * fem::apply_advection_transpose(mesh, quad, t.v, s.lambda[sj]);
    if (eps_tangent) rhs -= (dt * t.eps) * (K1 * s.lambda[sj]);
    const int obs = s.obs_of_step[sj];
    if (obs >= 0) rhs -= model.concentration_observer().transpose() * concentration_residual(sensors, rhat, obs);
    lhat[sj] = s.transport_system->solve_transpose(rhs);

    const QuadField lq = fem::values_at_quadrature(mesh, quad, s.lambda[sj]);
    const QuadField lhq = fem::values_at_quadrature(mesh, quad, lhat[sj]);
    fem::gradient_at_quadrature(mesh, quad, s.c[sj], gcx, gcy);
    fem::gradient_at_quadrature(mesh, quad, t.c[sj], ghx, ghy);
    for (std::size_t k = 0; k < lq.size(); ++k) {
      zhx[k] += dt * quad.weight * (lhq[k] * gcx[k] + lq[k] * ghx[k]);
      zhy[k] += dt * quad.weight * (lhq[k] * gcy[k] + lq[k] * ghy[k]);
    }
  }
  if (problem.fault() == AdjointFault::kFlipTransportCoupling) {
    for (auto& z : zhx) z = -z;
    for (auto& z : zhy) z = -z;
  }

  QuadField sx(zhx.size()), sy(zhy.size());
  for (std::size_t k = 0; k < zhx.size(); ++k) {
    sx[k] = t.kappa[k] * s.zx[k] + s.kappa[k] * zhx[k];
    sy[k] = t.kappa[k] * s.zy[k] + s.kappa[k] * zhy[k];
  }
  Vector hhat = Vector::Zero(mesh.num_nodes());
  fem::scatter_gradient(mesh, quad, sx, sy, hhat);
  hhat = -hhat;
  const Vector rp_hat = rhat.head(sensors.num_pressure());
  const Vector dK_mu = fem::apply_diffusion(mesh, quad, t.dcoef, s.mu);
  const Vector mu_hat = s.pressure_system->solve_homogeneous(
      -(model.pressure_observer().transpose() * rp_hat + hhat) - dK_mu);
  problem.counters().incremental_adjoint_solves++;

  if (!want_theta) {
    QuadField gmx, gmy;
    fem::gradient_at_quadrature(mesh, quad, mu_hat, gmx, gmy);
    QuadField fhx(gmx.size()), fhy(gmy.size());
    for (std::size_t k = 0; k < gmx.size(); ++k) {
      fhx[k] = quad.weight * gmx[k] - zhx[k];
      fhy[k] = quad.weight * gmy[k] - zhy[k];
    }
    const Vector base = coefficient_gradient(s, s.fx, s.fy, s.gpx, s.gpy);
    const Vector cross = coefficient_gradient(s, fhx, fhy, s.gpx, s.gpy) +
                         coefficient_gradient(s, s.fx, s.fy, t.gpx, t.gpy);
    return problem.regularization_gradient(dm) + t.dcoef.cwiseProduct(base) + s.expm.cwiseProduct(cross);
  }

  Vector g = params.zero();
  for (int k : {static_cast<int>(kPressureData), static_cast<int>(kConcentrationData)}) {
    const auto& b = params.block(k);
    g.segment(b.offset, b.size) =
        -b.scale * problem.observed().segment(b.offset, b.size).cwiseProduct(rhat.segment(b.offset, b.size));
  }
  Vector lambda_sum = Vector::Zero(mesh.num_nodes());
  double diffusion = 0.0;
  for (int j = 1; j <= nt; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    lambda_sum += lhat[sj];
    diffusion += lhat[sj].dot(K1 * s.c[sj]) + s.lambda[sj].dot(K1 * t.c[sj]);
  }
  g.segment(params.block(kSource).offset, params.block(kSource).size) =
      -dt * a * (model.source_basis().transpose() * (M * lambda_sum));
  g[params.block(kDiffusion).offset] = dt * model.config().diffusivity * a * diffusion;
  const Vector boundary = mask_dirichlet(
      model.dirichlet_mask(), model.pressure_observer().transpose() * rp_hat + hhat + dK_mu +
                                  s.pressure_system->stiffness() * mu_hat);
  g.segment(params.block(kBcLeft).offset, params.block(kBcLeft).size) =
      a * (model.boundary_basis(DirichletSide::kLeft).transpose() * boundary);
  g.segment(params.block(kBcRight).offset, params.block(kBcRight).size) =
      a * (model.boundary_basis(DirichletSide::kRight).transpose() * boundary);
  return g;
}

Vector Linearization::hess_vec(const Vector& dm, HessianMode mode) const {
  const InverseProblem& problem = *state_->problem;
  problem.counters().hessian_applies++;
  const Vector zero_theta = problem.params().zero();
  if (mode == HessianMode::kGaussNewton) {
    const Tangent t = forward_tangent(dm, zero_theta);
    return problem.regularization_gradient(dm) + jacobian_transpose(problem.weights().cwiseProduct(t.d));
  }
  const Tangent t = forward_tangent(dm, zero_theta);
  return adjoint_tangent(t, dm, zero_theta, false);
}

Vector Linearization::apply_B(const Vector& dtheta) const {
  const InverseProblem& problem = *state_->problem;
  problem.counters().b_applies++;
  const Vector zero_m = Vector::Zero(problem.inversion_dim());
  const Tangent t = forward_tangent(zero_m, dtheta);
  return adjoint_tangent(t, zero_m, dtheta, false);
}

Vector Linearization::apply_Bt(const Vector& w) const {
  const InverseProblem& problem = *state_->problem;
  problem.counters().bt_applies++;
  const Vector zero_theta = problem.params().zero();
  const Tangent t = forward_tangent(w, zero_theta);
  return adjoint_tangent(t, w, zero_theta, true);
}

Vector Linearization::jacobian_apply(const Vector& dm) const {
  return forward_tangent(dm, state_->problem->params().zero()).d;
}

Vector Linearization::jacobian_transpose(const Vector& r) const {
  const State& s = *state_;
  const AdjointFields a = adjoint_sweep(s, r);
  s.problem->counters().incremental_adjoint_solves++;
  return s.expm.cwiseProduct(coefficient_gradient(s, a.fx, a.fy, s.gpx, s.gpy));
}

}  // namespace hdsa
