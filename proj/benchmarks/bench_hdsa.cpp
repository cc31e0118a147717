#include <benchmark/benchmark.h>

#include <random>

#include "hdsa/experiment.hpp"

namespace hdsa {
namespace {

Vector randn(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

void BM_ForwardSolve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int steps = static_cast<int>(state.range(1));
  ForwardModel model(StructuredMesh(n, n), TimeGrid(ModelConfig{}.final_time, steps), ModelConfig{},
                     SensorLayout::standard(steps, 1));
  const Vector m = model.mesh().interpolate(truth_log_permeability);
  const auto aux = AuxiliaryParams::nominal(model.config());
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_observations(m, aux));
}
BENCHMARK(BM_ForwardSolve)->Args({15, 8})->Args({31, 24})->Unit(benchmark::kMillisecond);

void BM_HessianAction(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto mp = make_model_problem(n, 8);
  const auto lin = mp.problem->linearize(mp.truth, mp.theta);
  std::mt19937_64 rng(1);
  const Vector x = randn(rng, mp.problem->inversion_dim());
  const auto mode = state.range(1) ? HessianMode::kFull : HessianMode::kGaussNewton;
  for (auto _ : state) benchmark::DoNotOptimize(lin.hess_vec(x, mode));
}
BENCHMARK(BM_HessianAction)->Args({15, 1})->Args({15, 0})->Args({31, 1})->Unit(benchmark::kMillisecond);

void BM_ApplyD(benchmark::State& state) {
  const auto mp = make_model_problem(15, 8);
  const auto& p = *mp.problem;
  OptimizerConfig opt;
  opt.gradient_rtol = 1e-9;
  const double ref = reference_gradient_norm(p, mp.theta);
  const Vector m = solve_inverse(p, mp.theta, Vector::Zero(p.inversion_dim()), opt, ref).x;
  const auto cert = check_stationarity(p, m, mp.theta, ref);
  SensitivityOptions so;
  so.hessian_solver = state.range(0) ? HessianSolver::kDense : HessianSolver::kCg;
  SensitivityOperator op(std::make_shared<PdeSensitivity>(mp.problem, m, mp.theta, cert), so);
  std::mt19937_64 rng(2);
  const Vector dt = randn(rng, p.params().size());
  op.apply_D(dt);  // dense route: assemble and factor outside the timed loop
  for (auto _ : state) benchmark::DoNotOptimize(op.apply_D(dt));
}
BENCHMARK(BM_ApplyD)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace hdsa

BENCHMARK_MAIN();
