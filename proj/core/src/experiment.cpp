#include "hdsa/experiment.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <set>

#include "hdsa/errors.hpp"

namespace hdsa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- config parsing --------------------------------------------------------

/// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: '" + label() + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + child(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    used_.insert(key);
    static const json empty = json::object();
    auto it = j_.find(key);
    return Section(it == j_.end() ? empty : *it, child(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("config: unknown key '" + child(it.key()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

InnerHessian parse_inner(const std::string& s) {
  if (s == "auto") return InnerHessian::kAuto;
  if (s == "full") return InnerHessian::kFull;
  if (s == "gauss-newton") return InnerHessian::kGaussNewton;
  throw ConfigError("config: optimizer.inner_hessian must be auto, full or gauss-newton, got '" + s + "'");
}

HessianMode parse_mode(const std::string& s) {
  if (s == "full") return HessianMode::kFull;
  if (s == "gauss-newton") return HessianMode::kGaussNewton;
  throw ConfigError("config: hdsa.hessian must be full or gauss-newton, got '" + s + "'");
}

std::string kind_name(BlockKind k) { return k == BlockKind::kExperimental ? "experimental" : "auxiliary"; }

// --- formatting ------------------------------------------------------------

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string opt_int(int v) { return v < 0 ? std::string() : std::to_string(v); }

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  return out;
}

json read_json(const fs::path& path, const char* producer) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing '" + path.string() + "'; run '" + producer + "' first");
  return json::parse(in);
}

void write_points(const fs::path& path, const std::string& column, const std::vector<double>& xs,
                  const std::vector<double>& ys, const std::vector<double>& vals) {
  auto out = open_out(path);
  out << "# x y " << column << "\n";
  for (std::size_t i = 0; i < vals.size(); ++i) out << num(xs[i]) << ' ' << num(ys[i]) << ' ' << num(vals[i]) << "\n";
}

// --- models ------------------------------------------------------------------

constexpr double kPi = std::numbers::pi;

AuxiliaryParams nominal_aux(const ExperimentConfig& c) {
  return AuxiliaryParams::nominal(c.model, c.objective.auxiliary_scale);
}

Vector truth_on(const StructuredMesh& mesh) { return mesh.interpolate(truth_log_permeability); }

std::shared_ptr<InverseProblem> load_problem(const ExperimentConfig& config) {
  const json data = read_json(fs::path(config.output_dir) / "synthetic_data.json", "synth");
  auto model = make_inversion_model(config);
  Vector observed = json_vec(data.at("observed"));
  if (observed.size() != model->sensors().data_size()) {
    throw ConfigError("synthetic_data.json does not match the configured sensor layout; rerun 'synth'");
  }
  return std::make_shared<InverseProblem>(model, config.objective, std::move(observed));
}

Vector load_m_star(const ExperimentConfig& config, int size) {
  const json j = read_json(fs::path(config.output_dir) / "m_star.json", "invert");
  Vector m = json_vec(j.at("values"));
  if (m.size() != size) throw ConfigError("m_star.json does not match the inversion mesh; rerun 'invert'");
  return m;
}

// --- verification helpers -----------------------------------------------------

Vector random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * normal(rng);
  return v;
}

/// Smooth random field: bilinear prolongation of a random 4x4 coarse field.
Vector smooth_field(const StructuredMesh& mesh, std::mt19937_64& rng, double scale) {
  CoarseBasis basis(mesh, 3, 3);
  return basis.prolong(random_vector(rng, basis.size(), scale));
}

CheckResult make_check(std::string name, double measured, double tolerance, std::string detail = {}) {
  CheckResult c;
  c.name = std::move(name);
  c.measured = measured;
  c.tolerance = tolerance;
  c.passed = std::isfinite(measured) && measured < tolerance;
  c.detail = std::move(detail);
  return c;
}

void print_check(std::ostream& out, const CheckResult& c) {
  out << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(44) << c.name << " measured "
      << std::setw(12) << num(c.measured) << " tolerance " << num(c.tolerance);
  if (!c.detail.empty()) out << "  (" << c.detail << ")";
  out << "\n";
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }
double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

// --- configuration -------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (inversion_mesh < 2 || truth_mesh < 2) throw ConfigError("config: meshes need at least 2 elements per side");
  if (inversion_steps < 1 || truth_steps < 1) throw ConfigError("config: time_steps must be positive");
  if (truth_steps % inversion_steps != 0) {
    throw ConfigError("config: time_steps.truth (" + std::to_string(truth_steps) +
                      ") must be a multiple of time_steps.inversion (" + std::to_string(inversion_steps) +
                      ") so observation times coincide");
  }
  if (allow_inverse_crime) {
    if (truth_mesh < inversion_mesh || truth_steps < inversion_steps) {
      throw ConfigError("config: the truth discretization may not be coarser than the inversion one");
    }
  } else if (truth_mesh <= inversion_mesh || truth_steps <= inversion_steps) {
    throw ConfigError("config: truth mesh " + std::to_string(truth_mesh) + "/" + std::to_string(truth_steps) +
                      " is not strictly finer than inversion mesh " + std::to_string(inversion_mesh) + "/" +
                      std::to_string(inversion_steps) +
                      " (inverse crime); refine mesh.truth and time_steps.truth or pass --allow-inverse-crime");
  }
  model.validate();
  optimizer.validate();
  if (!(objective.alpha > 0.0)) throw ConfigError("config: objective.alpha must be positive");
  if (!(objective.sigma > 0.0)) throw ConfigError("config: objective.sigma must be positive");
  if (objective.l2_shift < 0.0) throw ConfigError("config: objective.l2_shift must be nonnegative");
  if (!(objective.experimental_scale > 0.0) || !(objective.auxiliary_scale > 0.0)) {
    throw ConfigError("config: parameter scalings must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("config: noise.sigma must be nonnegative");
  if (!(peclet_limit > 0.0)) throw ConfigError("config: peclet_limit must be positive");
  if (!(hdsa.stationarity_threshold > 0.0)) throw ConfigError("config: hdsa.stationarity_threshold must be positive");
  if (hdsa.curvature_probe_iterations < 1) throw ConfigError("config: hdsa.curvature_probe_iterations must be positive");
  if (!(hdsa.solver.cg_rtol > 0.0) || !(hdsa.solver.power_tol > 0.0)) {
    throw ConfigError("config: hdsa tolerances must be positive");
  }
  if (hdsa.solver.cg_max_iterations < 1 || hdsa.solver.power_max_iterations < 1) {
    throw ConfigError("config: hdsa iteration caps must be positive");
  }
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.read("seed", c.seed);
  root.read("output_dir", c.output_dir);
  root.read("allow_inverse_crime", c.allow_inverse_crime);
  root.read("peclet_limit", c.peclet_limit);
  {
    auto s = root.sub("mesh");
    s.read("inversion", c.inversion_mesh);
    s.read("truth", c.truth_mesh);
    s.finish();
  }
  {
    auto s = root.sub("time_steps");
    s.read("inversion", c.inversion_steps);
    s.read("truth", c.truth_steps);
    s.finish();
  }
  {
    auto s = root.sub("model");
    s.read("diffusivity", c.model.diffusivity);
    s.read("final_time", c.model.final_time);
    s.read("source_amplitude", c.model.source_amplitude);
    s.read("source_decay", c.model.source_decay);
    s.read("well_patch_halfwidth", c.model.well_patch_halfwidth);
    s.read("boundary_nodes", c.model.boundary_nodes);
    std::vector<std::array<double, 2>> wells;
    s.read("wells", wells);
    if (s.has("wells")) {
      c.model.wells.clear();
      for (const auto& w : wells) c.model.wells.push_back({w[0], w[1]});
    }
    s.finish();
  }
  {
    auto s = root.sub("objective");
    s.read("alpha", c.objective.alpha);
    s.read("sigma", c.objective.sigma);
    s.read("l2_shift", c.objective.l2_shift);
    s.read("experimental_scale", c.objective.experimental_scale);
    s.read("auxiliary_scale", c.objective.auxiliary_scale);
    s.finish();
  }
  {
    auto s = root.sub("noise");
    s.read("sigma", c.noise_sigma);
    s.finish();
  }
  {
    auto s = root.sub("optimizer");
    auto& o = c.optimizer;
    s.read("gradient_rtol", o.gradient_rtol);
    s.read("max_iterations", o.max_iterations);
    s.read("cg_rtol", o.cg_rtol);
    s.read("cg_forcing_power", o.cg_forcing_power);
    s.read("cg_max_iterations", o.cg_max_iterations);
    s.read("initial_radius", o.initial_radius);
    s.read("max_radius", o.max_radius);
    s.read("acceptance", o.acceptance);
    s.read("gauss_newton_switch", o.gauss_newton_switch);
    std::string inner = to_string(o.inner_hessian);
    s.read("inner_hessian", inner);
    o.inner_hessian = parse_inner(inner);
    s.finish();
  }
  {
    auto s = root.sub("hdsa");
    auto& h = c.hdsa;
    std::string mode = to_string(h.hessian);
    s.read("hessian", mode);
    h.hessian = parse_mode(mode);
    s.read("stationarity_threshold", h.stationarity_threshold);
    s.read("curvature_probe_iterations", h.curvature_probe_iterations);
    s.read("cg_rtol", h.solver.cg_rtol);
    s.read("cg_max_iterations", h.solver.cg_max_iterations);
    s.read("power_tol", h.solver.power_tol);
    s.read("power_max_iterations", h.solver.power_max_iterations);
    s.read("seed", h.solver.seed);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json wells = json::array();
  for (const auto& w : model.wells) wells.push_back({w.x, w.y});
  return {
      {"seed", seed},
      {"output_dir", output_dir},
      {"allow_inverse_crime", allow_inverse_crime},
      {"peclet_limit", peclet_limit},
      {"mesh", {{"inversion", inversion_mesh}, {"truth", truth_mesh}}},
      {"time_steps", {{"inversion", inversion_steps}, {"truth", truth_steps}}},
      {"model",
       {{"diffusivity", model.diffusivity},
        {"final_time", model.final_time},
        {"source_amplitude", model.source_amplitude},
        {"source_decay", model.source_decay},
        {"well_patch_halfwidth", model.well_patch_halfwidth},
        {"boundary_nodes", model.boundary_nodes},
        {"wells", wells}}},
      {"objective",
       {{"alpha", objective.alpha},
        {"sigma", objective.sigma},
        {"l2_shift", objective.l2_shift},
        {"experimental_scale", objective.experimental_scale},
        {"auxiliary_scale", objective.auxiliary_scale}}},
      {"noise", {{"sigma", noise_sigma}}},
      {"optimizer",
       {{"gradient_rtol", optimizer.gradient_rtol},
        {"max_iterations", optimizer.max_iterations},
        {"cg_rtol", optimizer.cg_rtol},
        {"cg_forcing_power", optimizer.cg_forcing_power},
        {"cg_max_iterations", optimizer.cg_max_iterations},
        {"initial_radius", optimizer.initial_radius},
        {"max_radius", optimizer.max_radius},
        {"acceptance", optimizer.acceptance},
        {"gauss_newton_switch", optimizer.gauss_newton_switch},
        {"inner_hessian", to_string(optimizer.inner_hessian)}}},
      {"hdsa",
       {{"hessian", to_string(hdsa.hessian)},
        {"stationarity_threshold", hdsa.stationarity_threshold},
        {"curvature_probe_iterations", hdsa.curvature_probe_iterations},
        {"cg_rtol", hdsa.solver.cg_rtol},
        {"cg_max_iterations", hdsa.solver.cg_max_iterations},
        {"power_tol", hdsa.solver.power_tol},
        {"power_max_iterations", hdsa.solver.power_max_iterations},
        {"seed", hdsa.solver.seed}}},
  };
}

// --- models and data -------------------------------------------------------------

double truth_log_permeability(double x, double y) {
  return -0.4 + 0.4 * std::cos(kPi * x) * std::cos(2.0 * kPi * y);
}

std::shared_ptr<ForwardModel> make_inversion_model(const ExperimentConfig& c) {
  return std::make_shared<ForwardModel>(StructuredMesh(c.inversion_mesh, c.inversion_mesh),
                                        TimeGrid(c.model.final_time, c.inversion_steps), c.model,
                                        SensorLayout::standard(c.inversion_steps, 1));
}

std::shared_ptr<ForwardModel> make_truth_model(const ExperimentConfig& c) {
  const int stride = c.truth_steps / c.inversion_steps;
  return std::make_shared<ForwardModel>(StructuredMesh(c.truth_mesh, c.truth_mesh),
                                        TimeGrid(c.model.final_time, c.truth_steps), c.model,
                                        SensorLayout::standard(c.truth_steps, stride));
}

double check_peclet(const ExperimentConfig& c) {
  const auto aux = nominal_aux(c);
  double worst = 0.0;
  for (const auto& model : {make_truth_model(c), make_inversion_model(c)}) {
    const Vector m = truth_on(model->mesh());
    const Vector p = model->solve_pressure(m, aux);
    const double pe = model->max_peclet(model->element_velocity(m, p), model->diffusivity(aux));
    if (pe > c.peclet_limit) {
      const int n = model->mesh().nx();
      throw ConfigError("config: element Peclet number " + num(pe) + " of the truth flow on the " +
                        std::to_string(n) + "x" + std::to_string(n) + " mesh exceeds peclet_limit " +
                        num(c.peclet_limit) + "; refine the mesh or raise model.diffusivity");
    }
    worst = std::max(worst, pe);
  }
  return worst;
}

SyntheticData synthesize(const ExperimentConfig& c) {
  c.validate();
  check_peclet(c);
  auto model = make_truth_model(c);
  SyntheticData out;
  out.truth = truth_on(model->mesh());
  out.nominal = model->predict_observations(out.truth, nominal_aux(c));
  out.seed = c.seed;
  out.noise_sigma = c.noise_sigma;
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  out.observed = out.nominal;
  for (Eigen::Index i = 0; i < out.observed.size(); ++i) {
    const double eta = c.noise_sigma * normal(rng);
    out.observed[i] *= 1.0 + eta;
  }
  return out;
}

// --- serialization -------------------------------------------------------------

json to_json(const IterationLog& log) {
  json rows = json::array();
  for (const auto& r : log) {
    rows.push_back({{"iteration", r.iteration},
                    {"objective", r.objective},
                    {"gradient_norm", r.gradient_norm},
                    {"relative_gradient", r.relative_gradient},
                    {"radius", r.radius},
                    {"cg_iterations", r.cg_iterations},
                    {"cg_exit", r.cg_exit},
                    {"hessian", r.hessian},
                    {"step_norm", r.step_norm},
                    {"ratio", r.ratio},
                    {"accepted", r.accepted}});
  }
  return rows;
}

json to_json(const StationarityCertificate& c) {
  return {{"relative_gradient", c.relative_gradient},
          {"gradient_norm", c.gradient_norm},
          {"reference_gradient_norm", c.reference_gradient_norm},
          {"threshold", c.threshold},
          {"hessian", to_string(c.hessian)},
          {"probe_iterations", c.probe_iterations},
          {"min_curvature", c.min_curvature},
          {"stationary", c.stationary()},
          {"positive_curvature", c.positive_curvature()},
          {"valid", c.valid()}};
}

json to_json(const SensitivityReport& r) {
  json blocks = json::array();
  for (const auto& b : r.blocks) {
    json entries = json::array();
    for (std::size_t i = 0; i < b.entries.size(); ++i) {
      const auto& e = b.entries[i];
      json row = {{"index", i}, {"pointwise", b.pointwise[i]}};
      if (e.sensor >= 0) row["sensor"] = e.sensor;
      if (e.time_index >= 0) row["time_index"] = e.time_index;
      if (!std::isnan(e.time)) row["time"] = e.time;
      if (!std::isnan(e.x)) row["x"] = e.x;
      if (!std::isnan(e.y)) row["y"] = e.y;
      if (e.well >= 0) row["well"] = e.well;
      if (e.local >= 0) row["local"] = e.local;
      if (e.boundary_node >= 0) row["boundary_node"] = e.boundary_node;
      entries.push_back(row);
    }
    blocks.push_back({{"name", b.name},
                      {"kind", kind_name(b.kind)},
                      {"size", b.size},
                      {"scale", b.scale},
                      {"norm", b.norm_label},
                      {"generalized",
                       {{"value", b.generalized.value},
                        {"method", b.generalized.method},
                        {"iterations", b.generalized.iterations},
                        {"converged", b.generalized.converged},
                        {"residual", b.generalized.residual},
                        {"direction", vec_json(b.generalized.direction)}}},
                      {"entries", entries}});
  }
  return {{"hessian", r.hessian},
          {"hessian_solver", r.hessian_solver},
          {"solution_norm", r.solution_norm},
          {"cg_rtol", r.cg_rtol},
          {"power_tol", r.power_tol},
          {"seed", r.seed},
          {"orthonormalized_bases", r.orthonormalized_bases},
          {"total_cg_iterations", r.total_cg_iterations},
          {"apply_D_calls", r.apply_D_calls},
          {"blocks", blocks}};
}

void write_grid(const fs::path& path, const StructuredMesh& mesh, const Vector& values) {
  if (values.size() != mesh.num_nodes()) throw DomainError("write_grid: value count does not match the mesh");
  auto out = open_out(path);
  out << "# x y value\n";
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const Point p = mesh.coords(n);
    out << num(p.x) << ' ' << num(p.y) << ' ' << num(values[n]) << "\n";
  }
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

std::string version_string() { return HDSA_VERSION; }

// --- commands --------------------------------------------------------------------

SyntheticData cmd_synth(const ExperimentConfig& c) {
  const SyntheticData data = synthesize(c);
  const fs::path dir = c.output_dir;
  auto truth_model = make_truth_model(c);
  const auto& sensors = truth_model->sensors();
  const TimeGrid& tg = truth_model->time();

  write_json(dir / "synthetic_data.json", {{"seed", data.seed},
                                           {"noise_sigma", data.noise_sigma},
                                           {"noise_model", "y = y_nominal * (1 + eta), eta ~ N(0, sigma^2)"},
                                           {"truth_mesh", c.truth_mesh},
                                           {"truth_steps", c.truth_steps},
                                           {"pressure_sensors", sensors.num_pressure()},
                                           {"concentration_sensors", sensors.num_concentration()},
                                           {"observation_times", sensors.num_times()},
                                           {"nominal", vec_json(data.nominal)},
                                           {"observed", vec_json(data.observed)}});

  auto csv = open_out(dir / "data.csv");
  csv << "index,kind,sensor,time_index,time,x,y,nominal,observed\n";
  for (int s = 0; s < sensors.num_pressure(); ++s) {
    const Point p = sensors.pressure[s];
    csv << s << ",pressure," << s << ",,," << num(p.x) << ',' << num(p.y) << ',' << num(data.nominal[s]) << ','
        << num(data.observed[s]) << "\n";
  }
  for (int s = 0; s < sensors.num_concentration(); ++s) {
    const Point p = sensors.concentration[s];
    for (int t = 0; t < sensors.num_times(); ++t) {
      const int i = sensors.concentration_index(s, t);
      csv << i << ",concentration," << s << ',' << t << ',' << num(tg.time(sensors.observation_steps[t])) << ','
          << num(p.x) << ',' << num(p.y) << ',' << num(data.nominal[i]) << ',' << num(data.observed[i]) << "\n";
    }
  }
  write_grid(dir / "truth.grid", truth_model->mesh(), data.truth);
  const StructuredMesh inv(c.inversion_mesh, c.inversion_mesh);
  write_grid(dir / "truth_inversion_mesh.grid", inv, truth_on(inv));
  return data;
}

InversionOutcome cmd_invert(const ExperimentConfig& c) {
  c.validate();
  auto problem = load_problem(c);
  const auto& mesh = problem->model().mesh();
  const Vector theta = problem->params().zero();
  const Vector m0 = Vector::Zero(problem->inversion_dim());
  const double ref = reference_gradient_norm(*problem, theta);

  InversionOutcome out;
  out.result = solve_inverse(*problem, theta, m0, c.optimizer, ref);
  out.certificate = check_stationarity(*problem, out.result.x, theta, ref, c.hdsa.stationarity_threshold,
                                       c.hdsa.hessian, c.hdsa.curvature_probe_iterations);
  const Vector truth = truth_on(mesh);
  out.initial_error = problem->mass_norm(truth - m0);
  out.final_error = problem->mass_norm(truth - out.result.x);

  const fs::path dir = c.output_dir;
  const auto& r = out.result;
  write_json(dir / "m_star.json", {{"mesh", c.inversion_mesh}, {"values", vec_json(r.x)}});
  write_grid(dir / "m_star.grid", mesh, r.x);
  auto csv = open_out(dir / "iterations.csv");
  csv << "iteration,objective,gradient_norm,relative_gradient,radius,cg_iterations,cg_exit,hessian,step_norm,"
         "ratio,accepted\n";
  for (const auto& e : r.log) {
    csv << e.iteration << ',' << num(e.objective) << ',' << num(e.gradient_norm) << ',' << num(e.relative_gradient)
        << ',' << num(e.radius) << ',' << e.cg_iterations << ',' << e.cg_exit << ',' << e.hessian << ','
        << num(e.step_norm) << ',' << num(e.ratio) << ',' << (e.accepted ? 1 : 0) << "\n";
  }
  write_json(dir / "stationarity.json", to_json(out.certificate));
  const double truth_norm = out.initial_error;
  write_json(dir / "inversion.json",
             {{"converged", r.converged},
              {"message", r.message},
              {"iterations", r.iterations},
              {"objective", r.value},
              {"relative_gradient", r.relative_gradient},
              {"gradient_norm", r.gradient_norm},
              {"reference_gradient_norm", r.reference_gradient_norm},
              {"relative_error_initial", truth_norm > 0.0 ? out.initial_error / truth_norm : 0.0},
              {"relative_error_final", truth_norm > 0.0 ? out.final_error / truth_norm : 0.0},
              {"error_reduction", truth_norm > 0.0 ? 1.0 - out.final_error / out.initial_error : 0.0},
              {"alpha", c.objective.alpha},
              {"l2_shift", c.objective.l2_shift},
              {"stationarity_valid", out.certificate.valid()}});
  return out;
}

SensitivityReport cmd_hdsa(const ExperimentConfig& c) {
  c.validate();
  std::shared_ptr<const InverseProblem> problem = load_problem(c);
  const auto& model = problem->model();
  const auto& mesh = model.mesh();
  const Vector theta = problem->params().zero();
  const Vector m = load_m_star(c, problem->inversion_dim());
  const double ref = reference_gradient_norm(*problem, theta);
  const auto cert = check_stationarity(*problem, m, theta, ref, c.hdsa.stationarity_threshold, c.hdsa.hessian,
                                       c.hdsa.curvature_probe_iterations);
  const fs::path dir = c.output_dir;
  write_json(dir / "stationarity.json", to_json(cert));

  auto sens = std::make_shared<PdeSensitivity>(problem, m, theta, cert, c.hdsa.hessian);
  SensitivityOperator op(sens, c.hdsa.solver);
  const SensitivityReport report = op.full_report();

  write_json(dir / "sensitivity_report.json", to_json(report));

  auto gen = open_out(dir / "generalized.csv");
  gen << "block,kind,size,scale,generalized_index,method,iterations,converged\n";
  for (const auto& b : report.blocks) {
    gen << b.name << ',' << kind_name(b.kind) << ',' << b.size << ',' << num(b.scale) << ','
        << num(b.generalized.value) << ',' << b.generalized.method << ',' << b.generalized.iterations << ','
        << (b.generalized.converged ? 1 : 0) << "\n";
  }

  const auto& sensors = model.sensors();
  for (const auto& b : report.blocks) {
    auto csv = open_out(dir / ("pointwise_" + b.name + ".csv"));
    csv << "index,sensor,time_index,time,x,y,well,local,boundary_node,pointwise_index\n";
    for (std::size_t i = 0; i < b.entries.size(); ++i) {
      const auto& e = b.entries[i];
      csv << i << ',' << opt_int(e.sensor) << ',' << opt_int(e.time_index) << ',' << num(e.time) << ','
          << num(e.x) << ',' << num(e.y) << ',' << opt_int(e.well) << ',' << opt_int(e.local) << ','
          << opt_int(e.boundary_node) << ',' << num(b.pointwise[i]) << "\n";
    }
    write_grid(dir / ("response_" + b.name + ".grid"), mesh, b.response);

    if (b.name == "pressure_data" || b.name == "source") {
      std::vector<double> xs, ys;
      for (const auto& e : b.entries) {
        xs.push_back(e.x);
        ys.push_back(e.y);
      }
      write_points(dir / ("pointwise_" + b.name + ".grid"), "pointwise_index", xs, ys, b.pointwise);
    }
    if (b.name == "concentration_data") {
      const int nt = sensors.num_times();
      for (const auto& [label, t] : {std::pair<const char*, int>{"first", 0}, {"final", nt - 1}}) {
        std::vector<double> xs, ys, vals;
        for (int s = 0; s < sensors.num_concentration(); ++s) {
          const int i = s * nt + t;
          xs.push_back(b.entries[i].x);
          ys.push_back(b.entries[i].y);
          vals.push_back(b.pointwise[i]);
        }
        write_points(dir / (std::string("pointwise_concentration_") + label + ".grid"), "pointwise_index", xs, ys,
                     vals);
      }
    }
    if (b.name == "bc_left" || b.name == "bc_right") {
      const auto& nominal = b.name == "bc_left" ? model.config().pressure_left : model.config().pressure_right;
      auto prof = open_out(dir / ("maximizer_" + b.name + ".csv"));
      prof << "boundary_node,y,theta,relative_perturbation,nominal_pressure,perturbed_pressure\n";
      for (int i = 0; i < b.size; ++i) {
        const double y = b.entries[i].y;
        const double th = b.generalized.direction[i];
        const double p = nominal(y);
        prof << i << ',' << num(y) << ',' << num(th) << ',' << num(b.scale * th) << ',' << num(p) << ','
             << num(p * (1.0 + b.scale * th)) << "\n";
      }
    }
  }

  // background fields for plotting
  const auto& lin = sens->linearization();
  write_grid(dir / "background_m_star.grid", mesh, m);
  const auto& steps = sensors.observation_steps;
  write_grid(dir / "background_concentration_first.grid", mesh, lin.concentration()[steps.front()]);
  write_grid(dir / "background_concentration_final.grid", mesh, lin.concentration()[steps.back()]);
  write_grid(dir / "background_pressure.grid", mesh, lin.pressure());
  return report;
}

int cmd_run_all(const ExperimentConfig& c, std::ostream& log) {
  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  json record = {{"version", version_string()},
                 {"config", c.to_json()},
                 {"seeds", {{"noise", c.seed}, {"power_iteration", c.hdsa.solver.seed}}}};
  json timings = json::object();
  json reports = json::array();
  int status = 0;
  const fs::path dir = c.output_dir;
  try {
    auto t0 = clock::now();
    cmd_synth(c);
    auto t1 = clock::now();
    timings["synth"] = seconds(t0, t1);
    for (const char* f : {"synthetic_data.json", "data.csv", "truth.grid", "truth_inversion_mesh.grid"}) {
      reports.push_back(f);
    }
    log << "synth: wrote " << (dir / "synthetic_data.json").string() << "\n";

    const auto inv = cmd_invert(c);
    auto t2 = clock::now();
    timings["invert"] = seconds(t1, t2);
    record["iteration_log"] = to_json(inv.result.log);
    record["inversion"] = {{"converged", inv.result.converged},
                           {"iterations", inv.result.iterations},
                           {"relative_gradient", inv.result.relative_gradient},
                           {"error_reduction", 1.0 - inv.final_error / inv.initial_error}};
    for (const char* f : {"m_star.json", "m_star.grid", "iterations.csv", "stationarity.json", "inversion.json"}) {
      reports.push_back(f);
    }
    log << "invert: " << (inv.result.converged ? "converged" : "NOT converged") << " after "
        << inv.result.iterations << " iterations, relative gradient " << num(inv.result.relative_gradient)
        << ", error reduction " << num(100.0 * (1.0 - inv.final_error / inv.initial_error)) << "%\n";

    const auto report = cmd_hdsa(c);
    auto t3 = clock::now();
    timings["hdsa"] = seconds(t2, t3);
    reports.push_back("sensitivity_report.json");
    reports.push_back("generalized.csv");
    for (const auto& b : report.blocks) {
      log << "hdsa: " << std::left << std::setw(20) << b.name << " S = " << num(b.generalized.value) << "\n";
    }
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    record["error"] = e.what();
    status = 1;
  }
  record["timings_seconds"] = timings;
  record["reports"] = reports;
  record["exit_status"] = status;
  write_json(dir / "run_record.json", record);
  return status;
}

// --- model problem -------------------------------------------------------------

ModelProblem make_model_problem(int n, int steps, double alpha) {
  ModelProblem mp;
  ModelConfig config;
  config.diffusivity = kModelProblemDiffusivity;
  mp.model = std::make_shared<ForwardModel>(StructuredMesh(n, n), TimeGrid(config.final_time, steps), config,
                                            SensorLayout::standard(steps, 1));
  mp.truth = mp.model->mesh().interpolate(
      [](double x, double y) { return 0.5 * std::sin(kPi * x) * std::sin(kPi * y) - 0.2; });
  ObjectiveSpec spec;
  spec.alpha = alpha;
  Vector data = mp.model->predict_observations(mp.truth, AuxiliaryParams::nominal(mp.model->config(), spec.auxiliary_scale));
  mp.problem = std::make_shared<InverseProblem>(mp.model, spec, std::move(data));
  mp.theta = mp.problem->params().zero();
  return mp;
}

// --- verification -------------------------------------------------------------

namespace {

CheckResult check_prop1(std::ostream* table, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_dist(5, 40), p_dist(5, 60);
  double worst = 0.0;
  if (table) *table << "instance     n    p          trace    sum_of_squares        gap\n";
  for (int k = 0; k < 50; ++k) {
    const int n = n_dist(rng);
    const int p = p_dist(rng);
    const auto prob = random_linear_problem(rng, n, p);
    const auto chk = verify_prop1(prob);
    worst = std::max(worst, chk.gap);
    if (table) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%8d %5d %4d %14.8e %17.8e %10.2e\n", k, n, p, chk.trace, chk.sum_of_squares,
                    chk.gap);
      *table << buf;
    }
  }
  return make_check("trace identity, 50 dense problems", worst, 1e-10, "max relative gap");
}

struct FdPoint {
  Vector m;
  Vector theta;
};

FdPoint fd_point(const ModelProblem& mp, std::mt19937_64& rng) {
  FdPoint pt;
  pt.m = smooth_field(mp.model->mesh(), rng, 0.2);
  pt.theta = random_vector(rng, mp.problem->params().size(), 0.3);
  return pt;
}

CheckResult check_gradient(const InverseProblem& p, const FdPoint& pt, std::mt19937_64& rng, int directions,
                           const std::string& name) {
  const auto lin = p.linearize(pt.m, pt.theta);
  const double h = 1e-6;
  double worst = 0.0;
  for (int d = 0; d < directions; ++d) {
    const Vector dm = random_vector(rng, p.inversion_dim());
    const double fd = (p.objective(pt.m + h * dm, pt.theta) - p.objective(pt.m - h * dm, pt.theta)) / (2.0 * h);
    worst = std::max(worst, rel(lin.gradient().dot(dm), fd));
  }
  return make_check(name, worst, 1e-5, std::to_string(directions) + " directions, step 1e-6");
}

}  // namespace

std::vector<CheckResult> run_verification(VerifySuite suite, std::ostream& out, unsigned long long seed) {
  std::vector<CheckResult> results;
  const auto add = [&](CheckResult c) {
    print_check(out, c);
    results.push_back(std::move(c));
  };

  if (suite == VerifySuite::kProp1) {
    const auto c = check_prop1(&out, seed);
    out << "\n";
    add(c);
    return results;
  }

  add(check_prop1(nullptr, seed));

  std::mt19937_64 rng(seed);
  const ModelProblem mp = make_model_problem();
  const InverseProblem& p = *mp.problem;
  const FdPoint pt = fd_point(mp, rng);

  add(check_gradient(p, pt, rng, 10, "gradient vs central differences"));

  {
    const auto lin = p.linearize(pt.m, pt.theta);
    const double h = 1e-5;
    double fd_worst = 0.0, sym_worst = 0.0, gn_min = 0.0;
    for (int d = 0; d < 10; ++d) {
      const Vector x = random_vector(rng, p.inversion_dim());
      const Vector y = random_vector(rng, p.inversion_dim());
      const Vector hx = lin.hess_vec(x);
      const Vector fd = (p.gradient(pt.m + h * x, pt.theta) - p.gradient(pt.m - h * x, pt.theta)) / (2.0 * h);
      fd_worst = std::max(fd_worst, rel(hx, fd));
      const double a = hx.dot(y);
      const double b = x.dot(lin.hess_vec(y));
      sym_worst = std::max(sym_worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
      gn_min = std::min(gn_min, x.dot(lin.hess_vec(x, HessianMode::kGaussNewton)));
    }
    add(make_check("Hessian action vs differenced gradients", fd_worst, 1e-4, "10 directions, step 1e-5"));
    add(make_check("Hessian symmetry", sym_worst, 1e-10, "10 random pairs"));
    add(make_check("Gauss-Newton curvature >= -1e-12", -gn_min, 1e-12, "negated minimum over 10 vectors"));

    double b_worst = 0.0, bt_worst = 0.0;
    for (int k = 0; k < p.params().num_blocks(); ++k) {
      Vector local = random_vector(rng, p.params().block(k).size);
      local /= p.params().block_norm(local, k);
      const Vector dt = p.params().extend(local, k);
      const Vector dm = random_vector(rng, p.inversion_dim());
      const auto central = [&](double hb) {
        return Vector((p.gradient(pt.m, pt.theta + hb * dt) - p.gradient(pt.m, pt.theta - hb * dt)) / (2.0 * hb));
      };
      // Richardson extrapolation removes the O(h^2) term; the boundary blocks are strongly curved.
      // The gradient is affine in the data perturbations, so those blocks take a unit step.
      const double hb = p.params().block(k).kind == BlockKind::kExperimental ? 1.0 : 1e-4;
      const Vector fd = (4.0 * central(0.5 * hb) - central(hb)) / 3.0;
      b_worst = std::max(b_worst, rel(lin.apply_B(dt), fd));
      bt_worst = std::max(bt_worst, rel(lin.apply_B(dt).dot(dm), lin.apply_Bt(dm).dot(dt)));
    }
    add(make_check("mixed derivative B vs differenced gradients", b_worst, 1e-4, "one direction per block, extrapolated from steps h and h/2, h = 1 (data) or 1e-4"));
    add(make_check("B and B^T adjoint consistency", bt_worst, 1e-10, "one pair per block"));

    // cost model
    auto& counters = p.counters();
    const Vector dt = random_vector(rng, p.params().size());
    const auto before = counters.linearized_solves();
    lin.apply_B(dt);
    const double b_cost = static_cast<double>(counters.linearized_solves() - before);
    add(make_check("apply_B costs 2 linearized solves", std::abs(b_cost - 2.0), 0.5,
                   "counted " + num(b_cost)));
  }

  {
    // sensitivity operator at the model problem's minimizer
    OptimizerConfig opt;
    opt.gradient_rtol = 1e-9;
    opt.max_iterations = 200;
    const double ref = reference_gradient_norm(p, mp.theta);
    const auto sol = solve_inverse(p, mp.theta, Vector::Zero(p.inversion_dim()), opt, ref);
    const auto cert = check_stationarity(p, sol.x, mp.theta, ref);
    add(make_check("model problem reaches stationarity", cert.relative_gradient, 1e-6,
                   std::to_string(sol.iterations) + " iterations"));
    if (cert.valid()) {
      auto sens = std::make_shared<PdeSensitivity>(mp.problem, sol.x, mp.theta, cert);
      SensitivityOptions cg;
      cg.hessian_solver = HessianSolver::kCg;
      cg.cg_max_iterations = 5000;
      SensitivityOperator op(sens, cg);
      ApplyStats stats;
      const Vector dt = random_vector(rng, p.params().size());
      op.apply_D(dt, &stats);
      const double expected = 2.0 + 2.0 * stats.cg_iterations;
      add(make_check("apply_D costs 2 + 2I linearized solves", std::abs(stats.linearized_solves - expected), 0.5,
                     "I = " + std::to_string(stats.cg_iterations) + ", counted " +
                         std::to_string(stats.linearized_solves)));
      const auto fd = sensitivity_resolve_check(mp, sol.x, 1, seed);
      for (auto& c : fd) add(std::move(c));
    }
  }

  {
    std::mt19937_64 drng(seed + 1);
    const auto prob = random_linear_problem(drng, 30, 20);
    auto sens = std::make_shared<DenseSensitivity>(prob);
    SensitivityOperator op(sens);
    const Matrix D = dense_D(prob);
    double worst = 0.0;
    for (int i = 0; i < prob.data_size(); ++i) {
      const Vector e = Vector::Unit(prob.data_size(), i);
      worst = std::max(worst, rel(op.apply_D(e), D.col(i)));
    }
    add(make_check("apply_D vs dense closed form", worst, 1e-8, "all 30 columns"));
    const auto gi = op.generalized_index(0);
    const Matrix cols = op.block_columns(0);
    const auto dense = op.generalized_from_columns(0, cols);
    add(make_check("power iteration vs dense eigensolver", rel(gi.value, dense.value), 1e-6,
                   "S = " + num(dense.value)));
    const auto& w = sens->params().block(0).norm_weights;
    const Vector dx = op.apply_D(gi.direction);
    const double rq = dx.norm() / std::sqrt(gi.direction.dot(w.cwiseProduct(gi.direction)));
    add(make_check("maximizer Rayleigh quotient", rel(rq, gi.value), 1e-8));
  }

  {
    ModelProblem faulty = make_model_problem();
    faulty.problem->inject_fault(AdjointFault::kFlipTransportCoupling);
    std::mt19937_64 frng(seed);
    const FdPoint fpt = fd_point(faulty, frng);
    const auto c = check_gradient(*faulty.problem, fpt, frng, 3, "");
    // the suite must reject the faulty adjoint
    CheckResult m;
    m.name = "mutation: flipped adjoint coupling detected";
    m.measured = c.measured;
    m.tolerance = c.tolerance;
    m.passed = !c.passed;
    m.detail = "gradient check must fail";
    print_check(out, m);
    results.push_back(m);
  }
  return results;
}

std::vector<CheckResult> sensitivity_resolve_check(const ModelProblem& mp, const Vector& m_star,
                                                   int directions_per_block, unsigned long long seed) {
  const InverseProblem& p = *mp.problem;
  const auto& params = p.params();
  const double ref = reference_gradient_norm(p, mp.theta);
  const auto cert = check_stationarity(p, m_star, mp.theta, ref);
  auto sens = std::make_shared<PdeSensitivity>(mp.problem, m_star, mp.theta, cert);
  SensitivityOperator op(sens);

  OptimizerConfig opt;
  opt.gradient_rtol = 1e-11;
  opt.max_iterations = 100;
  opt.cg_rtol = 1e-3;
  opt.inner_hessian = InnerHessian::kFull;
  const double eps = 1e-3;

  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  for (int k = 0; k < params.num_blocks(); ++k) {
    const auto& block = params.block(k);
    double worst = 0.0;
    for (int d = 0; d < directions_per_block; ++d) {
      Vector local = random_vector(rng, block.size);
      local /= params.block_norm(local, k);
      const Vector dt = params.extend(local, k);
      const Vector predicted = op.apply_D(dt);
      const auto plus = solve_inverse(p, mp.theta + eps * dt, m_star, opt, ref);
      const auto minus = solve_inverse(p, mp.theta - eps * dt, m_star, opt, ref);
      const Vector fd = (plus.x - minus.x) / (2.0 * eps);
      worst = std::max(worst, p.mass_norm(predicted - fd) / std::max(p.mass_norm(fd), 1e-300));
    }
    out.push_back(make_check("D vs re-solve, block " + block.name, worst, 0.05,
                             std::to_string(directions_per_block) + " direction(s), step 1e-3"));
  }
  return out;
}

}  // namespace hdsa
