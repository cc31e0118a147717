#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hdsa/errors.hpp"
#include "hdsa/experiment.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::optional<std::string> output_dir;
  std::optional<int> mesh;
  std::optional<int> truth_mesh;
  std::optional<int> steps;
  std::optional<int> truth_steps;
  std::optional<std::string> hessian;
  bool allow_inverse_crime = false;
};

hdsa::ExperimentConfig resolve(const Overrides& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw hdsa::ConfigError("cannot read config '" + o.config_path + "'");
    try {
      j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw hdsa::ConfigError("config '" + o.config_path + "': " + e.what());
    }
  }
  if (o.seed) j["seed"] = *o.seed;
  if (o.output_dir) j["output_dir"] = *o.output_dir;
  if (o.mesh) j["mesh"]["inversion"] = *o.mesh;
  if (o.truth_mesh) j["mesh"]["truth"] = *o.truth_mesh;
  if (o.steps) j["time_steps"]["inversion"] = *o.steps;
  if (o.truth_steps) j["time_steps"]["truth"] = *o.truth_steps;
  if (o.hessian) j["hdsa"]["hessian"] = *o.hessian;
  if (o.allow_inverse_crime) j["allow_inverse_crime"] = true;
  return hdsa::ExperimentConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyper-differential sensitivity analysis of a Darcy/tracer permeability inversion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", hdsa::version_string());

  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON experiment config (defaults apply to missing keys)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Noise RNG seed");
  app.add_option("-o,--output-dir", o.output_dir, "Directory for all artifacts");
  app.add_option("--mesh", o.mesh, "Inversion mesh elements per side");
  app.add_option("--truth-mesh", o.truth_mesh, "Truth mesh elements per side");
  app.add_option("--steps", o.steps, "Inversion time steps");
  app.add_option("--truth-steps", o.truth_steps, "Truth time steps");
  app.add_option("--hessian", o.hessian, "Hessian used by the sensitivity analysis")
      ->check(CLI::IsMember({"full", "gauss-newton"}));
  app.add_flag("--allow-inverse-crime", o.allow_inverse_crime,
               "Permit truth data on the inversion discretization");

  auto* synth = app.add_subcommand("synth", "Generate synthetic observations from the truth field");
  auto* invert = app.add_subcommand("invert", "Solve the inverse problem from a zero initial guess");
  auto* hdsa_cmd = app.add_subcommand("hdsa", "Sensitivity report at the computed minimizer");
  auto* verify = app.add_subcommand("verify", "Run the derivative and sensitivity property suite");
  std::string suite = "all";
  verify->add_option("suite", suite, "all or prop1")->check(CLI::IsMember({"all", "prop1"}));
  auto* run_all = app.add_subcommand("run-all", "synth, invert and hdsa in sequence, plus a run record");
  auto* show = app.add_subcommand("config", "Print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      const auto which = suite == "prop1" ? hdsa::VerifySuite::kProp1 : hdsa::VerifySuite::kAll;
      const auto results = hdsa::run_verification(which, std::cout, o.seed.value_or(1234));
      int failed = 0;
      for (const auto& r : results) failed += r.passed ? 0 : 1;
      std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
      return failed == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
    }

    const auto config = resolve(o);
    if (show->parsed()) {
      std::cout << config.to_json().dump(2) << "\n";
      return EXIT_SUCCESS;
    }
    if (synth->parsed()) {
      const auto data = hdsa::cmd_synth(config);
      std::cout << "wrote " << data.observed.size() << " observations to " << config.output_dir << "\n";
      return EXIT_SUCCESS;
    }
    if (invert->parsed()) {
      const auto out = hdsa::cmd_invert(config);
      const auto& r = out.result;
      std::cout << (r.converged ? "converged" : "NOT converged") << " after " << r.iterations
                << " iterations: " << r.message << "\n"
                << "relative gradient " << r.relative_gradient << ", error reduction "
                << 100.0 * (1.0 - out.final_error / out.initial_error) << "%\n"
                << "stationarity certificate " << (out.certificate.valid() ? "valid" : "INVALID") << "\n";
      return r.converged && out.certificate.valid() ? EXIT_SUCCESS : EXIT_FAILURE;
    }
    if (hdsa_cmd->parsed()) {
      const auto report = hdsa::cmd_hdsa(config);
      for (const auto& b : report.blocks) std::cout << b.name << "  S = " << b.generalized.value << "\n";
      return EXIT_SUCCESS;
    }
    if (run_all->parsed()) return hdsa::cmd_run_all(config, std::cout);
  } catch (const hdsa::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const hdsa::ValidityError& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return EXIT_FAILURE;
}
