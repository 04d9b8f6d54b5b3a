// Micro-benchmarks for the hot paths: layer generation, the hierarchy
// sweeps, the harmonic solve, Green block factorization, and raw walker
// stepping throughput. Items/sec is the natural unit everywhere (layers for
// the analysis passes, steps for the walker).

#include <benchmark/benchmark.h>

#include <striprw/env.hpp>
#include <striprw/green.hpp>
#include <striprw/harmonic.hpp>
#include <striprw/hierarchy.hpp>
#include <striprw/walker.hpp>

#include <string>

using namespace striprw;

namespace {

std::string qp_spec(int m) {
    return R"({"kind":"quasiperiodic","m":)" + std::to_string(m) +
           R"(,"seed":5,"dim":1,"harmonics":3})";
}

void BM_BuildEnvironment(benchmark::State& state) {
    const std::int64_t half = state.range(0);
    const std::string spec = qp_spec(2);
    for (auto _ : state) {
        Environment env = build_environment(spec, -half, half, 100);
        benchmark::DoNotOptimize(env.n_max());
    }
    state.SetItemsProcessed(state.iterations() * (2 * half + 201));
}
BENCHMARK(BM_BuildEnvironment)->Arg(500)->Arg(2000);

void BM_HierarchySweep(benchmark::State& state) {
    const std::int64_t half = state.range(0);
    const int m = static_cast<int>(state.range(1));
    const Environment env = build_environment(qp_spec(m), -half, half, 100);
    for (auto _ : state) {
        HierarchyData hier = compute_hierarchy(env);
        benchmark::DoNotOptimize(hier.diag().zeta_seed_influence);
    }
    state.SetItemsProcessed(state.iterations() * (2 * half + 201));
}
BENCHMARK(BM_HierarchySweep)->Args({500, 2})->Args({2000, 2})->Args({500, 4});

void BM_HarmonicSolve(benchmark::State& state) {
    const std::int64_t half = state.range(0);
    const Environment env = build_environment(qp_spec(2), -half, half, 100);
    const HierarchyData hier = compute_hierarchy(env);
    for (auto _ : state) {
        HarmonicData harm = compute_harmonic(env, hier);
        benchmark::DoNotOptimize(harm.av.diffusivity);
    }
    state.SetItemsProcessed(state.iterations() * (2 * half + 1));
}
BENCHMARK(BM_HarmonicSolve)->Arg(500)->Arg(2000);

void BM_GreenBlock(benchmark::State& state) {
    const std::int64_t L = state.range(0);
    const Environment env = build_environment(qp_spec(2), -L, L, 10);
    for (auto _ : state) {
        GreenTable g = green_exact(env, -L, L, 0, 1);
        benchmark::DoNotOptimize(g.total());
    }
    state.SetItemsProcessed(state.iterations() * (2 * L - 1));
}
BENCHMARK(BM_GreenBlock)->Arg(30)->Arg(200)->Arg(1000);

void BM_GreenDense(benchmark::State& state) {
    const std::int64_t L = state.range(0);
    const Environment env = build_environment(qp_spec(2), -L, L, 10);
    for (auto _ : state) {
        GreenTable g = green_exact_dense(env, -L, L, 0, 1);
        benchmark::DoNotOptimize(g.total());
    }
    state.SetItemsProcessed(state.iterations() * (2 * L - 1));
}
BENCHMARK(BM_GreenDense)->Arg(30);

void BM_WalkerSteps(benchmark::State& state) {
    const std::string spec = state.range(0) == 1
                                 ? std::string(R"({"kind":"perturbed-srw","laziness":0.5})")
                                 : qp_spec(2);
    const Environment env = build_environment(spec, -2000, 2000, 50);
    TrajectorySimulator sim(env);
    TrajectorySpec traj;
    traj.horizon = 10000;
    std::int64_t index = 0;
    for (auto _ : state) {
        TrajectoryStats st = run_trajectory(sim, traj, std::uint64_t{1}, index++);
        benchmark::DoNotOptimize(st.end_layer);
    }
    state.SetItemsProcessed(state.iterations() * traj.horizon);
}
BENCHMARK(BM_WalkerSteps)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
