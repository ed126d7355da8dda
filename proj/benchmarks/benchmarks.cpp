#include <benchmark/benchmark.h>

#include "fidgap/attack_pipeline.hpp"
#include "fidgap/gradient_check.hpp"
#include "fidgap/mpc_engine.hpp"
#include "fidgap/qp_solver.hpp"
#include "fidgap/spm_model.hpp"

using namespace fidgap;

namespace {

void BM_SpmStep(benchmark::State& state) {
  const auto p = attack::case_study_spm();
  const auto ops = spm::control_operators(p);
  auto s = spm::initial_state(p, 0.3);
  for (auto _ : state) {
    s = spm::step(s, 0.0, ops);
    benchmark::DoNotOptimize(s.conc.data());
  }
}
BENCHMARK(BM_SpmStep);

void BM_QpSolve(benchmark::State& state) {
  const auto n = state.range(0);
  qp::QpProblem p;
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(n, n);
  p.hessian = m.transpose() * m + Eigen::MatrixXd::Identity(n, n);
  p.linear = Eigen::VectorXd::Random(n);
  p.ineq = Eigen::MatrixXd::Random(2 * n, n);
  p.ineq_rhs = Eigen::VectorXd::Constant(2 * n, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(qp::solve(p).x.data());
}
BENCHMARK(BM_QpSolve)->Arg(10)->Arg(40);

void BM_HighFidelityMpc(benchmark::State& state) {
  const attack::PipelineConfig c;
  const auto ops = spm::control_operators(c.spm);
  mpc::HorizonSettings hs;
  hs.horizon = static_cast<int>(state.range(0));
  hs.limits = c.limits;
  hs.soc_target = c.soc_target;
  hs.control_scale = c.resolved_control_scale() / c.area;
  const auto x0 = spm::initial_state(c.spm, c.soc_init);
  const auto problem = mpc::soften(
      mpc::build_high_fidelity_problem(c.spm, ops, c.theta_h, AttackLevel::low(), hs, c.area, x0), c.slack_weight);
  for (auto _ : state) benchmark::DoNotOptimize(mpc::solve(problem).cost);
}
BENCHMARK(BM_HighFidelityMpc)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_PdpGradient(benchmark::State& state) {
  const auto c = inverse::random_gradient_case(7);
  for (auto _ : state) benchmark::DoNotOptimize(inverse::pdp_gradient(c.theta, c.u_ref, c.scenario).value.data());
}
BENCHMARK(BM_PdpGradient)->Unit(benchmark::kMillisecond);

void BM_FdGradient(benchmark::State& state) {
  const auto c = inverse::random_gradient_case(7);
  for (auto _ : state) benchmark::DoNotOptimize(inverse::fd_gradient(c.theta, c.u_ref, c.scenario).data());
}
BENCHMARK(BM_FdGradient)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
