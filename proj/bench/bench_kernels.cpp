// Serial reference kernel against the OpenMP kernel for per-subject
// marginal contributions, and a full fit under each.

#include <benchmark/benchmark.h>

#include <cmath>

#include "popbic/estimation.hpp"
#include "popbic/likelihood.hpp"
#include "popbic/simulate.hpp"

using namespace popbic;

namespace {

struct Setup {
  ModelSpec spec;
  ThetaVector theta;
  Dataset data;
  BoundModel bm;
};

Setup make_setup(std::size_t N) {
  Setup s;
  s.spec.structural = "onecpt_oral";
  s.spec.transforms = {Transform::Log, Transform::Log, Transform::Log};
  s.spec.covariates = CovariateMap(3);
  s.spec.pattern = validate_pattern(CovariancePattern::diagonal({true, true, true}));
  s.theta.beta = Eigen::Vector3d(0.0, std::log(0.1), std::log(20.0));
  s.theta.omega = Eigen::Vector3d(0.04, 0.01, 0.09).asDiagonal();
  s.theta.a = 0.3;
  SimDesign d;
  d.N = N;
  d.seed = 11;
  s.data = simulate_dataset(s.spec, s.theta, d);
  s.bm = bind_model(s.spec, s.data);
  return s;
}

void run_kernel(benchmark::State& state, bool parallel, int nodes) {
  const Setup s = make_setup(static_cast<std::size_t>(state.range(0)));
  LikelihoodOptions opts;
  opts.nodes = nodes;
  std::vector<double> out(s.data.size());
  for (auto _ : state) {
    if (parallel)
      kernels::subject_contributions_omp(s.bm, s.data, s.theta, opts, out);
    else
      kernels::subject_contributions_serial(s.bm, s.data, s.theta, opts, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LaplaceSerial(benchmark::State& st) { run_kernel(st, false, 1); }
void BM_LaplaceOmp(benchmark::State& st) { run_kernel(st, true, 1); }
void BM_Agq5Serial(benchmark::State& st) { run_kernel(st, false, 5); }
void BM_Agq5Omp(benchmark::State& st) { run_kernel(st, true, 5); }

void run_fit(benchmark::State& state, Exec exec) {
  const Setup s = make_setup(20);
  FitOptions fo;
  fo.exec = exec;
  fo.standard_errors = false;
  for (auto _ : state) {
    const FitResult fit = fit_ml(s.data, s.spec, fo);
    benchmark::DoNotOptimize(fit.loglik);
  }
}

void BM_FitSerial(benchmark::State& st) { run_fit(st, Exec::Serial); }
void BM_FitOmp(benchmark::State& st) { run_fit(st, Exec::Parallel); }

}  // namespace

BENCHMARK(BM_LaplaceSerial)->Arg(20)->Arg(200);
BENCHMARK(BM_LaplaceOmp)->Arg(20)->Arg(200);
BENCHMARK(BM_Agq5Serial)->Arg(20)->Arg(200);
BENCHMARK(BM_Agq5Omp)->Arg(20)->Arg(200);
BENCHMARK(BM_FitSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FitOmp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
