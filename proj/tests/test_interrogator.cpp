// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "phiotdr/dsp.hpp"
#include "phiotdr/error.hpp"
#include "phiotdr/interrogator.hpp"

using namespace phiotdr;
using interrogator::AcquisitionParams;
using interrogator::LaserParams;
using interrogator::PulseParams;
using interrogator::SessionSynthesizer;

namespace {

const double dz_exact = oracle::c0 / (2.0 * 1.468 * 250e6);

AcquisitionParams short_acq(double seconds, double snr_db = 40.0)
{
    AcquisitionParams a;
    a.baseline_duration = seconds;
    a.event_duration = 0.0;
    a.post_duration = 0.0;
    a.receiver_snr_db = snr_db;
    return a;
}

/// A single-bin sinusoidal perturbation of `amplitude` rad at `freq` Hz at `position`.
SessionSynthesizer tone_session(double amplitude, double freq, double position, double rep, double width,
                                double seconds, std::uint64_t seed, double linewidth = 1000.0,
                                double snr_db = 40.0)
{
    auto layout = fiber::default_layout();
    layout.discharge_position = position;
    layout.sensor_extent = dz_exact;
    spark::PressureSignal sig;
    sig.sample_rate = rep;
    const auto n = static_cast<std::size_t>(seconds * rep) + 2;
    sig.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        sig.samples[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rep);
    spark::DischargeEvent e{0.0, 25e3, 3.125, position};
    fiber::CouplingProfile c{fiber::CouplingName::opgw_straight, amplitude};
    auto field = fiber::build_scatterer_field(layout, dz_exact, seed);
    auto pert = fiber::perturbation_field({e}, {sig}, c, fiber::BackgroundNoise::none(), layout, dz_exact, seed);
    PulseParams pulse;
    pulse.repetition_rate = rep;
    pulse.width = width;
    LaserParams laser;
    laser.linewidth = linewidth;
    const auto gate_first = static_cast<std::size_t>(position / dz_exact) - 60;
    return SessionSynthesizer(std::move(field), std::move(pert), laser, pulse, short_acq(seconds, snr_db), seed,
                              {gate_first, 120});
}

double recovered_amplitude(double amplitude, std::uint64_t seed)
{
    const auto synth = tone_session(amplitude, 100.0, 500.0, 5000.0, 50e-9, 0.2, seed);
    const auto traces = synth.synthesize_all();
    const auto phase = dsp::differential_phase(traces, 10.0);
    const auto col = phase.nearest_column(500.0);
    REQUIRE(phase.masked_count(col) == 0);
    return oracle::sine_amplitude(phase.column(col), 5000.0, 100.0);
}

}  // namespace

TEST_CASE("max unambiguous range")
{
    CHECK(interrogator::max_unambiguous_range(2000.0, 1.468) == doctest::Approx(51054.57).epsilon(1e-6));
    CHECK(interrogator::max_unambiguous_range(15000.0, 1.468) == doctest::Approx(6807.28).epsilon(1e-6));
    for (double f : {400.0, 1234.0, 7000.0})
        CHECK(interrogator::max_unambiguous_range(2.0 * f, 1.468) ==
              interrogator::max_unambiguous_range(f, 1.468) / 2.0);
    CHECK_THROWS_AS(interrogator::max_unambiguous_range(0.0, 1.468), ArgumentError);
}

TEST_CASE("range precondition on both sides of the limit")
{
    const double limit = interrogator::max_unambiguous_range(2000.0, 1.468);
    CHECK_NOTHROW(interrogator::check_range(0.99 * limit, 2000.0, 1.468));
    CHECK_NOTHROW(interrogator::check_range(limit, 2000.0, 1.468));
    CHECK_THROWS_AS(interrogator::check_range(limit * (1.0 + 1e-9), 2000.0, 1.468), RangeError);
    CHECK_THROWS_AS(interrogator::check_range(60e3, 15000.0, 1.468), RangeError);
    try {
        interrogator::check_range(60e3, 2000.0, 1.468);
        FAIL("60 km at 2 kHz accepted");
    } catch (const RangeError& e) {
        CHECK(e.limit_m() == doctest::Approx(limit));
        CHECK(std::string(e.what()).find("51.05") != std::string::npos);
    }

    interrogator::SessionConfig cfg;
    cfg.layout.segments = {{"launch", 59e3, 1.468}, {"sensor", 1e3, 1.468}};
    cfg.layout.discharge_position = 59.5e3;
    cfg.pulse.repetition_rate = 2000.0;
    cfg.background.tones = {{100.0, 0.05}};
    cfg.acquisition = short_acq(0.01);
    CHECK_THROWS_AS(interrogator::prepare_session(cfg, {0, 10}), RangeError);
}

TEST_CASE("parameter validation")
{
    PulseParams p;
    p.repetition_rate = 20000.0;
    CHECK_THROWS_AS(p.validate(250e6), ConstructionError);
    p = {};
    p.width = 5e-9;
    CHECK_THROWS_AS(p.validate(250e6), ConstructionError);
    p = {};
    CHECK(p.footprint_bins(250e6) == 25);
    p.width = 50e-9;
    CHECK(p.footprint_bins(250e6) == 13);
    LaserParams l;
    l.linewidth = 2000.0;
    CHECK_THROWS_AS(l.validate(), ConstructionError);
    CHECK(AcquisitionParams{}.bin_spacing() == doctest::Approx(dz_exact).epsilon(1e-12));
}

TEST_CASE("static fiber without noise gives identical rows")
{
    auto layout = fiber::default_layout();
    auto field = fiber::build_scatterer_field(layout, dz_exact, 4);
    auto pert = fiber::perturbation_field({}, {}, {}, fiber::BackgroundNoise::none(), layout, dz_exact, 4);
    LaserParams laser;
    laser.linewidth = 0.0;
    SessionSynthesizer s(std::move(field), std::move(pert), laser, {}, short_acq(0.002, INFINITY), 4);
    const auto t = s.synthesize_all();
    REQUIRE(t.n_pulses == 30);
    REQUIRE(t.n_bins == 3918);
    for (std::size_t p = 1; p < t.n_pulses; ++p)
        CHECK(std::memcmp(t.row(p).data(), t.row(0).data(), t.n_bins * sizeof(std::complex<float>)) == 0);
    const auto times = t.pulse_times();
    for (std::size_t p = 1; p < times.size(); ++p)
        CHECK(times[p] - times[p - 1] == doctest::Approx(1.0 / 15000.0).epsilon(1e-9));
    for (auto v : t.samples)
        CHECK(std::isfinite(v.real()));
}

TEST_CASE("injected 100 Hz tone is recovered at 0.3 rad")
{
    const double a = recovered_amplitude(0.3, 21);
    CHECK(a == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("injected perturbation recovery is linear")
{
    const double a1 = recovered_amplitude(0.1, 21);
    const double a3 = recovered_amplitude(0.3, 21);
    CHECK(a3 / a1 == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("backscatter intensity is exponential")
{
    // 10 ns pulses span three bins; every third bin is an independent sample.
    fiber::FiberLayout layout;
    layout.segments = {{"long", 3.0e5 * dz_exact, 1.468}};
    layout.discharge_position = 100.0;
    auto field = fiber::build_scatterer_field(layout, dz_exact, 6);
    auto pert = fiber::perturbation_field({}, {}, {}, fiber::BackgroundNoise::none(), layout, dz_exact, 6);
    PulseParams pulse;
    pulse.repetition_rate = 400.0;
    pulse.width = 10e-9;
    SessionSynthesizer s(std::move(field), std::move(pert), {}, pulse, short_acq(0.0025, INFINITY), 6);
    REQUIRE(s.footprint() == 3);
    REQUIRE(s.n_pulses() == 1);
    std::vector<std::complex<float>> row(s.n_bins());
    s.synthesize(0, 1, row);
    std::vector<double> intensity;
    for (std::size_t k = 1; k + 1 < row.size(); k += 3)
        intensity.push_back(std::norm(std::complex<double>(row[k])));
    REQUIRE(intensity.size() >= 100000);
    double mean = 0.0;
    for (double x : intensity)
        mean += x / static_cast<double>(intensity.size());
    CHECK(oracle::ks_exponential_p(intensity, mean) > 0.01);
}

TEST_CASE("laser phase noise is common mode")
{
    auto spread = [](double linewidth) {
        const auto s = tone_session(0.0, 100.0, 500.0, 5000.0, 50e-9, 0.2, 8, linewidth);
        const auto phase = dsp::differential_phase(s.synthesize_all(), 10.0);
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t k = 0; k < phase.n_cols; ++k) {
            if (phase.masked_count(k) != 0)
                continue;
            sum += oracle::population_std(phase.column(k));
            ++n;
        }
        return sum / static_cast<double>(n);
    };
    CHECK(spread(1000.0) == doctest::Approx(spread(0.0)).epsilon(0.05));
}

TEST_CASE("serial and parallel synthesis agree bit for bit")
{
    interrogator::SessionConfig cfg;
    cfg.acquisition.baseline_duration = 0.05;
    cfg.acquisition.event_duration = 0.3;
    cfg.acquisition.post_duration = 0.05;
    const auto prep = interrogator::prepare_session(cfg, {2500, 300});
    const auto& s = prep.synthesizer;
    const std::size_t rows = 700;
    std::vector<std::complex<float>> a(rows * s.n_bins());
    std::vector<std::complex<float>> b(rows * s.n_bins());
    s.synthesize(5000, rows, a);
    s.synthesize_serial(5000, rows, b);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0);
    // Any pulse range reproduces the same rows.
    std::vector<std::complex<float>> c(10 * s.n_bins());
    s.synthesize(5300, 10, c);
    CHECK(std::memcmp(c.data(), a.data() + 300 * s.n_bins(), c.size() * sizeof(c[0])) == 0);
}

TEST_CASE("gated synthesis matches the full fiber in differential phase")
{
    interrogator::SessionConfig cfg;
    cfg.acquisition.baseline_duration = 0.02;
    cfg.acquisition.event_duration = 0.0;
    cfg.acquisition.post_duration = 0.0;
    const auto full = interrogator::run_protocol(cfg);
    const auto gated = interrogator::run_protocol(cfg, {2000, 400});
    const auto pf = dsp::differential_phase(full.traces, 10.0);
    const auto pg = dsp::differential_phase(gated.traces, 10.0);
    // Fade masks are calibrated per acquisition, so compare a column unmasked in both.
    std::size_t col = pg.nearest_column(900.0);
    while (pg.masked_count(col) != 0 || pf.masked_count(pf.nearest_column(pg.column_position(col))) != 0)
        ++col;
    const std::size_t colf = pf.nearest_column(pg.column_position(col));
    CHECK(pg.column_position(col) == doctest::Approx(pf.column_position(colf)));
    const auto a = pf.column(colf);
    const auto b = pg.column(col);
    double worst = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p)
        worst = std::max(worst, std::abs(dsp::wrap_phase(a[p] - b[p] - (a[0] - b[0]))));
    CHECK(worst < 1e-3);
}

TEST_CASE("protocol timeline")
{
    interrogator::SessionConfig cfg;
    const auto prep = interrogator::prepare_session(cfg, {2600, 10});
    CHECK(prep.synthesizer.n_pulses() == 300000);
    CHECK(prep.synthesizer.meta().t0 == 0.0);
    CHECK(std::abs(static_cast<double>(prep.events.size()) - 87.0) <= 3.0);
    for (const auto& e : prep.events) {
        CHECK(e.time >= 5.0);
        CHECK(e.time < 15.0);
        CHECK(e.fiber_position == 1080.0);
    }
    CHECK(prep.scope_trace.samples.size() >= 20000000 - 1);

    cfg.acquisition.event_duration = 0.0;
    cfg.acquisition.baseline_duration = 0.1;
    cfg.acquisition.post_duration = 0.1;
    const auto quiet = interrogator::run_protocol(cfg, {2600, 10});
    CHECK(quiet.events.empty());
    CHECK(quiet.traces.n_pulses == 3000);
}

TEST_CASE("PHIOTDR1 round trip and header validation")
{
    interrogator::SessionConfig cfg;
    cfg.acquisition = short_acq(0.004);
    const auto t = interrogator::run_protocol(cfg).traces;
    const auto dir = oracle::scratch_dir("trace_io");
    const auto path = dir / "t.phiotdr";
    interrogator::write_trace(path, t);
    CHECK(std::filesystem::file_size(path) == 8 + 4 + 5 * 8 + 3 * 8 + t.samples.size() * 8);
    const auto back = interrogator::read_trace(path);
    CHECK(back.n_pulses == t.n_pulses);
    CHECK(back.n_bins == t.n_bins);
    CHECK(back.samples == t.samples);
    CHECK(back.meta.repetition_rate == t.meta.repetition_rate);
    CHECK(back.meta.bin_spacing == t.meta.bin_spacing);
    CHECK(back.meta.seed == t.meta.seed);

    auto bytes = oracle::slurp(path);
    bytes[0] = 'X';
    oracle::spit(dir / "bad_magic.phiotdr", bytes);
    CHECK_THROWS_AS(interrogator::read_trace(dir / "bad_magic.phiotdr"), FormatError);
    bytes = oracle::slurp(path);
    bytes[8] = 2;
    oracle::spit(dir / "bad_version.phiotdr", bytes);
    CHECK_THROWS_AS(interrogator::read_trace(dir / "bad_version.phiotdr"), FormatError);
    oracle::spit(dir / "short.phiotdr", oracle::slurp(path).substr(0, 200));
    CHECK_THROWS_AS(interrogator::read_trace(dir / "short.phiotdr"), FormatError);
    CHECK_THROWS_AS(interrogator::read_trace(dir / "missing.phiotdr"), IoError);

    const auto gated = interrogator::run_protocol(cfg, {100, 50}).traces;
    CHECK_THROWS_AS(interrogator::write_trace(dir / "gated.phiotdr", gated), ArgumentError);
    std::filesystem::remove_all(dir);
}
