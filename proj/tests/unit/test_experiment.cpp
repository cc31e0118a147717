#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hdsa/errors.hpp"
#include "hdsa/experiment.hpp"

namespace hdsa {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

TEST(ExperimentConfig, EmptyObjectGivesDefaults) {
  const auto c = ExperimentConfig::from_json(json::object());
  EXPECT_EQ(c.inversion_mesh, 31);
  EXPECT_EQ(c.truth_mesh, 62);
  EXPECT_EQ(c.inversion_steps, 24);
  EXPECT_EQ(c.truth_steps, 48);
  EXPECT_DOUBLE_EQ(c.objective.alpha, 3e-2);
  EXPECT_DOUBLE_EQ(c.objective.sigma, 0.03);
  EXPECT_DOUBLE_EQ(c.noise_sigma, 0.03);
  EXPECT_DOUBLE_EQ(c.model.diffusivity, 0.025);
  EXPECT_EQ(c.hdsa.hessian, HessianMode::kFull);
  EXPECT_FALSE(c.allow_inverse_crime);
  EXPECT_NO_THROW(c.validate());
}

TEST(ExperimentConfig, UnknownKeysAreRejected) {
  try {
    ExperimentConfig::from_json(json::parse(R"({"objective": {"alpah": 1.0}})"));
    ADD_FAILURE() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("objective.alpah"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::from_json(json::parse(R"({"hdsa": {"threads": 4}})")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_json(json::parse(R"({"hdsa": {"hessian": "newton"}})")), ConfigError);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  auto c = ExperimentConfig::from_json(json::parse(
      R"({"seed": 7, "mesh": {"inversion": 12, "truth": 24}, "time_steps": {"inversion": 3, "truth": 6},
          "objective": {"alpha": 0.5}, "hdsa": {"hessian": "gauss-newton"}, "optimizer": {"inner_hessian": "full"}})"));
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.hdsa.hessian, HessianMode::kGaussNewton);
  const json j = c.to_json();
  const auto d = ExperimentConfig::from_json(j);
  EXPECT_EQ(d.to_json(), j);
  EXPECT_EQ(d.model.wells.size(), c.model.wells.size());
}

TEST(ExperimentConfig, InverseCrimeGuard) {
  ExperimentConfig c;
  c.truth_mesh = c.inversion_mesh;
  c.truth_steps = c.inversion_steps;
  try {
    c.validate();
    ADD_FAILURE() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("inverse crime"), std::string::npos);
  }
  c.allow_inverse_crime = true;
  EXPECT_NO_THROW(c.validate());
  c.truth_mesh = c.inversion_mesh - 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExperimentConfig, TruthStepsMustBeMultiple) {
  ExperimentConfig c;
  c.truth_steps = 50;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExperimentConfig, LoadAcceptsComments) {
  const fs::path dir = fs::temp_directory_path() / "hdsa_config_test";
  fs::create_directories(dir);
  const fs::path file = dir / "c.json";
  std::ofstream(file) << "{\n  // coarse run\n  \"seed\": 99\n}\n";
  EXPECT_EQ(ExperimentConfig::load(file).seed, 99u);
  EXPECT_THROW(ExperimentConfig::load(dir / "missing.json"), ConfigError);
}

TEST(Peclet, GuardNamesMeshAndLimit) {
  ExperimentConfig c;
  c.inversion_mesh = 12;
  c.truth_mesh = 24;
  c.inversion_steps = 2;
  c.truth_steps = 4;
  c.peclet_limit = 50.0;
  EXPECT_LT(check_peclet(c), c.peclet_limit);
  c.model.diffusivity = 1e-3;
  try {
    check_peclet(c);
    ADD_FAILURE() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Peclet"), std::string::npos) << msg;
    EXPECT_NE(msg.find("24x24 mesh"), std::string::npos) << msg;
    EXPECT_NE(msg.find("peclet_limit 50"), std::string::npos) << msg;
  }
}

class SynthTest : public ::testing::Test {
 protected:
  void SetUp() override {
    c.inversion_mesh = 8;
    c.truth_mesh = 16;
    c.inversion_steps = 2;
    c.truth_steps = 4;
    c.peclet_limit = 1e3;
  }
  ExperimentConfig c;
};

TEST_F(SynthTest, NoiseFreeDataEqualsNominal) {
  c.noise_sigma = 0.0;
  const auto d = synthesize(c);
  EXPECT_EQ(d.observed, d.nominal);
  EXPECT_EQ(d.nominal.size(), make_inversion_model(c)->sensors().data_size());
}

TEST_F(SynthTest, NoiseIsSeededAndMultiplicative) {
  const auto a = synthesize(c);
  const auto b = synthesize(c);
  EXPECT_EQ(a.observed, b.observed);
  c.seed += 1;
  const auto other = synthesize(c);
  EXPECT_NE(a.observed, other.observed);
  EXPECT_EQ(a.nominal, other.nominal);
  const Eigen::ArrayXd eta = (a.observed.array() / a.nominal.array() - 1.0) / c.noise_sigma;
  EXPECT_NEAR(eta.mean(), 0.0, 0.15);
  EXPECT_NEAR(std::sqrt((eta - eta.mean()).square().mean()), 1.0, 0.15);
}

TEST_F(SynthTest, TruthFieldOnTruthMesh) {
  const auto d = synthesize(c);
  const auto model = make_truth_model(c);
  ASSERT_EQ(d.truth.size(), model->mesh().num_nodes());
  for (int i = 0; i < d.truth.size(); i += 37) {
    const Point p = model->mesh().coords(i);
    EXPECT_DOUBLE_EQ(d.truth[i], truth_log_permeability(p.x, p.y));
  }
}

TEST(Commands, MissingInputsAreReported) {
  ExperimentConfig c;
  c.output_dir = (fs::temp_directory_path() / "hdsa_empty_run").string();
  fs::remove_all(c.output_dir);
  EXPECT_THROW(cmd_invert(c), ConfigError);
  EXPECT_THROW(cmd_hdsa(c), ConfigError);
}

TEST(Verification, Prop1SuitePasses) {
  std::ostringstream out;
  const auto results = run_verification(VerifySuite::kProp1, out);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}

}  // namespace
}  // namespace hdsa
