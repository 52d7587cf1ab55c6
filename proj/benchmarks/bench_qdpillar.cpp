#include "qdpillar/cascade.hpp"
#include "qdpillar/design.hpp"
#include "qdpillar/efficiency.hpp"
#include "qdpillar/emitter_cavity.hpp"
#include "qdpillar/layered_optics.hpp"
#include "qdpillar/pillar_modes.hpp"
#include "qdpillar/tcspc.hpp"

#include <benchmark/benchmark.h>

using namespace qdpillar;

namespace {

void BM_StackResponse(benchmark::State& state) {
    const auto stack = optics::build_quarter_wave_cavity(optics::QuarterWaveDesign{});
    double wl = 900.0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(optics::stack_response(stack, wl));
        wl = wl < 920.0 ? wl + 0.01 : 900.0;
    }
}
BENCHMARK(BM_StackResponse);

void BM_FindResonance(benchmark::State& state) {
    const auto stack = optics::build_quarter_wave_cavity(optics::QuarterWaveDesign{});
    for (auto _ : state) benchmark::DoNotOptimize(optics::find_resonance(stack, 880.0, 940.0));
    state.SetLabel("5/18 pairs, 60 nm window");
}
BENCHMARK(BM_FindResonance)->Unit(benchmark::kMillisecond);

void BM_GuidedModes(benchmark::State& state) {
    modes::PillarGeometry g;
    g.diameter_um = static_cast<double>(state.range(0)) / 100.0;
    const int l_max = static_cast<int>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(modes::solve_guided_modes(g, 910.0, l_max));
}
BENCHMARK(BM_GuidedModes)->Args({202, 0})->Args({202, 10})->Args({300, 0})->Unit(benchmark::kMillisecond);

void BM_LeakyRate(benchmark::State& state) {
    modes::PillarGeometry g;
    for (auto _ : state) benchmark::DoNotOptimize(emitter::leaky_rate(g, 910.0));
}
BENCHMARK(BM_LeakyRate)->Unit(benchmark::kMillisecond);

void BM_EvolvePulse(benchmark::State& state) {
    const cascade::CascadeParams p;
    for (auto _ : state) benchmark::DoNotOptimize(cascade::evolve_pulse(p, p.pulse_area));
}
BENCHMARK(BM_EvolvePulse)->Unit(benchmark::kMicrosecond);

void BM_TrajectoryEnsemble(benchmark::State& state) {
    const cascade::CascadeParams p;
    const auto n = state.range(0);
    for (auto _ : state) benchmark::DoNotOptimize(cascade::trajectory_ensemble(p, n, 1));
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_TrajectoryEnsemble)->Arg(100'000)->Unit(benchmark::kMillisecond);

void BM_LifetimeFit(benchmark::State& state) {
    tcspc::ModelParams truth;
    truth.tau = 300.0;
    truth.sigma = tcspc::IrfModel{}.sigma_ps();
    truth.t0 = 1000.0;
    truth.amplitude = 1.0;
    truth.baseline = 0.0;
    const auto h = tcspc::synthesize_histogram(tcspc::ModelKind::exp_gauss, truth, {}, 7);
    for (auto _ : state) benchmark::DoNotOptimize(tcspc::fit_lifetime(h, tcspc::ModelKind::exp_gauss));
}
BENCHMARK(BM_LifetimeFit)->Unit(benchmark::kMillisecond);

void BM_Budget(benchmark::State& state) {
    const budget::DetectionChain chain;
    const std::vector<budget::NamedRate> rates{{"xx", {401'000.0, 1'000.0}}, {"x", {198'000.0, 1'000.0}}};
    for (auto _ : state) benchmark::DoNotOptimize(budget::compute_budget(rates, chain));
}
BENCHMARK(BM_Budget);

void BM_DesignPoint(benchmark::State& state) {
    const design::Evaluator evaluator;
    design::DesignPoint p;
    evaluator(p);
    for (auto _ : state) {
        p.diameter_um = p.diameter_um < 2.5 ? p.diameter_um + 0.01 : 1.5;
        benchmark::DoNotOptimize(evaluator(p));
    }
    state.SetLabel("planar part cached");
}
BENCHMARK(BM_DesignPoint)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
