#include <benchmark/benchmark.h>

#include "contagion/dynamics.hpp"
#include "contagion/powergrid.hpp"

using namespace contagion;

namespace {

MarketParams market() { return MarketParams::two_stock(0.05, 0.10, 0.15, 0.30, 0.40, 0.0, 0.20, 0.30); }
IntensityModel intensity() { return IntensityModel::power_clamp(2, 10.0, 0.7, 0.3, 1.0, 0.05, 1.0); }

void BM_SimulatePaths(benchmark::State& state, Backend backend) {
    const PathConfig cfg{1.0, 250, static_cast<int>(state.range(0)), 7, {100.0, 100.0}};
    for (auto _ : state) benchmark::DoNotOptimize(simulate_paths(market(), intensity(), cfg, backend));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PowerStep(benchmark::State& state, Backend backend) {
    const PowerProblem prob(market(), intensity(), AdmissibleBox{{-1.0, -1.0}, {1.0, 1.0}, 0.01}, PowerParams{0.5});
    GridSpec spec;
    spec.delta = 5.0;
    spec.s_max = spec.p_max = static_cast<double>(state.range(0));
    spec = with_stable_dt(prob, spec);
    const PowerSolver solver(prob, spec);
    const std::vector<double> next(static_cast<std::size_t>(spec.n_s()) * spec.n_p(), 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(solver.step(next, 0.0, backend));
    state.SetItemsProcessed(state.iterations() * spec.n_s() * spec.n_p());
}

}  // namespace

BENCHMARK_CAPTURE(BM_SimulatePaths, serial, Backend::serial)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_SimulatePaths, openmp, Backend::openmp)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_PowerStep, reference, Backend::serial)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_PowerStep, openmp, Backend::openmp)->Arg(100)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
