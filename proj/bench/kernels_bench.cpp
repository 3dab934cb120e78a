// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels against their serial references on a 256-pulse block of the
// default 1.6 km fiber.
#include <benchmark/benchmark.h>

#include "phiotdr/dsp.hpp"
#include "phiotdr/interrogator.hpp"

using namespace phiotdr;

namespace {

constexpr std::size_t block = 256;

const interrogator::PreparedSession& session()
{
    static const auto prepared = [] {
        interrogator::SessionConfig cfg;
        cfg.acquisition.event_duration = 1.0;
        cfg.acquisition.post_duration = 0.0;
        cfg.acquisition.baseline_duration = 0.5;
        return interrogator::prepare_session(cfg);
    }();
    return prepared;
}

const std::vector<std::complex<float>>& trace_block()
{
    static const auto rows = [] {
        const auto& s = session().synthesizer;
        std::vector<std::complex<float>> out(block * s.n_bins());
        s.synthesize(7500, block, out);
        return out;
    }();
    return rows;
}

struct PhaseBlock {
    dsp::PhaseMatrix shape;
    std::vector<float> values;
    std::vector<std::uint8_t> mask;
};

const PhaseBlock& phase_block()
{
    static const auto pb = [] {
        const auto& s = session().synthesizer;
        dsp::DifferentialPhaser phaser(s.meta(), s.n_bins(), 10.0);
        PhaseBlock b;
        b.values.resize(block * phaser.n_cols());
        b.mask.resize(b.values.size());
        phaser.process(trace_block(), block, b.values, b.mask);
        b.shape = phaser.describe(block);
        return b;
    }();
    return pb;
}

void synthesize(benchmark::State& state, bool parallel)
{
    const auto& s = session().synthesizer;
    std::vector<std::complex<float>> out(block * s.n_bins());
    for (auto _ : state) {
        if (parallel)
            s.synthesize(7500, block, out);
        else
            s.synthesize_serial(7500, block, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * block));
}

void phaser(benchmark::State& state, bool parallel)
{
    const auto& s = session().synthesizer;
    const auto& rows = trace_block();
    for (auto _ : state) {
        state.PauseTiming();
        dsp::DifferentialPhaser p(s.meta(), s.n_bins(), 10.0);
        std::vector<float> values(block * p.n_cols());
        std::vector<std::uint8_t> mask(values.size());
        state.ResumeTiming();
        if (parallel)
            p.process(rows, block, values, mask);
        else
            p.process_serial(rows, block, values, mask);
        benchmark::DoNotOptimize(values.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * block));
}

void activity(benchmark::State& state, bool parallel)
{
    const auto& pb = phase_block();
    for (auto _ : state) {
        state.PauseTiming();
        dsp::ActivityAccumulator acc(pb.shape, 10e-3, 2e-3);
        state.ResumeTiming();
        if (parallel)
            acc.push(pb.values, pb.mask, block);
        else
            acc.push_serial(pb.values, pb.mask, block);
        benchmark::DoNotOptimize(acc.map().values.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * block));
}

}  // namespace

BENCHMARK_CAPTURE(synthesize, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(synthesize, openmp, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(phaser, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(phaser, openmp, true)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(activity, serial, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(activity, openmp, true)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
