// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/interrogator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <optional>
#include <sstream>

#include "phiotdr/binary_io.hpp"
#include "phiotdr/error.hpp"
#include "phiotdr/rng.hpp"

namespace phiotdr::interrogator {

namespace {

constexpr std::size_t noise_block = 64;

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

/// exp(i x); Taylor series for small steps, libm otherwise.
std::complex<double> expi(double x) noexcept
{
    if (std::abs(x) > 0.125)
        return std::polar(1.0, x);
    const double x2 = x * x;
    const double c = 1.0 - x2 / 2.0 * (1.0 - x2 / 12.0 * (1.0 - x2 / 30.0 * (1.0 - x2 / 56.0)));
    const double s = x * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0))));
    return {c, s};
}

/// Bins between exact re-evaluations of the accumulated rotation.
constexpr std::size_t resync_interval = 64;

}  // namespace

void LaserParams::validate() const
{
    if (!(wavelength >= 1.2e-6 && wavelength <= 1.7e-6))
        throw ConstructionError("laser: wavelength must lie in [1.2e-6, 1.7e-6] m");
    if (!(linewidth >= 0.0 && linewidth <= 1000.0))
        throw ConstructionError("laser: linewidth must lie in [0, 1000] Hz (sub-kHz source)");
}

void PulseParams::validate(double adc_rate) const
{
    if (!(repetition_rate >= 400.0 && repetition_rate <= 15000.0))
        throw ConstructionError("pulse: repetition_rate must lie in [400, 15000] Hz");
    if (!(width >= 10e-9 && width <= 500e-9))
        throw ConstructionError("pulse: width must lie in [10, 500] ns");
    if (!(width * adc_rate >= 2.0 - 1e-9))
        throw ConstructionError("pulse: width must span at least 2 ADC sample periods");
    if (!std::isfinite(peak_power_dbm))
        throw ConstructionError("pulse: peak_power_dbm must be finite");
}

std::size_t PulseParams::footprint_bins(double adc_rate) const
{
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(width * adc_rate)));
}

void AcquisitionParams::validate() const
{
    if (!(std::isfinite(adc_rate) && adc_rate > 0.0))
        throw ConstructionError("acquisition: adc_rate must be > 0");
    if (!(std::isfinite(group_index) && group_index >= 1.0))
        throw ConstructionError("acquisition: group_index must be >= 1");
    if (std::isnan(receiver_snr_db) || receiver_snr_db == -INFINITY)
        throw ConstructionError("acquisition: receiver_snr_db must be a number or +inf");
    if (!finite_nonneg(baseline_duration) || !finite_nonneg(event_duration) || !finite_nonneg(post_duration))
        throw ConstructionError("acquisition: durations must be >= 0");
}

double AcquisitionParams::bin_spacing() const noexcept { return speed_of_light / (2.0 * group_index * adc_rate); }

std::vector<double> TraceMatrix::pulse_times() const
{
    std::vector<double> t(n_pulses);
    for (std::size_t p = 0; p < n_pulses; ++p)
        t[p] = pulse_time(p);
    return t;
}

double max_unambiguous_range(double repetition_rate, double group_index)
{
    if (!(repetition_rate > 0.0))
        throw ArgumentError("max_unambiguous_range: repetition_rate must be > 0");
    if (!(group_index > 0.0))
        throw ArgumentError("max_unambiguous_range: group_index must be > 0");
    return speed_of_light / (2.0 * group_index * repetition_rate);
}

void check_range(double fiber_length, double repetition_rate, double group_index)
{
    const double limit = max_unambiguous_range(repetition_rate, group_index);
    if (fiber_length > limit) {
        std::ostringstream msg;
        msg.setf(std::ios::fixed);
        msg.precision(3);
        msg << "fiber length " << fiber_length / 1e3 << " km exceeds max_unambiguous_range " << limit / 1e3
            << " km at " << repetition_rate << " Hz repetition rate";
        throw RangeError(msg.str(), limit);
    }
}

SessionSynthesizer::SessionSynthesizer(fiber::ScattererField field, fiber::PhasePerturbation perturbation,
                                       LaserParams laser, PulseParams pulse, AcquisitionParams acq, std::uint64_t seed,
                                       RangeGate gate)
    : field_(std::move(field)),
      perturbation_(std::move(perturbation)),
      laser_(laser),
      pulse_(pulse),
      acq_(acq),
      seed_(seed)
{
    laser_.validate();
    acq_.validate();
    pulse_.validate(acq_.adc_rate);
    const double dz = acq_.bin_spacing();
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); };
    if (!close(field_.bin_spacing, dz) || !close(perturbation_.bin_spacing(), dz))
        throw ArgumentError("synthesize_session: scatterer field / perturbation bin spacing does not match c/(2 n f_adc)");
    if (field_.size() != perturbation_.bin_count())
        throw ArgumentError("synthesize_session: scatterer field and perturbation cover different fibers");
    check_range(perturbation_.layout().total_length(), pulse_.repetition_rate, acq_.group_index);
    perturbation_.background().check_nyquist(0.5 * pulse_.repetition_rate);

    const std::size_t n_fiber = field_.size();
    if (gate.first_bin >= n_fiber)
        throw ArgumentError("synthesize_session: range gate starts beyond the fiber end");
    gate_first_ = gate.first_bin;
    gate_count_ = gate.bin_count == 0 ? n_fiber - gate_first_ : std::min(gate.bin_count, n_fiber - gate_first_);

    footprint_ = pulse_.footprint_bins(acq_.adc_rate);
    half_lo_ = (footprint_ - 1) / 2;
    half_hi_ = footprint_ - 1 - half_lo_;
    eval_first_ = gate_first_ - std::min(gate_first_, half_lo_);
    eval_count_ = std::min(n_fiber, gate_first_ + gate_count_ + half_hi_) - eval_first_;

    n_pulses_ = static_cast<std::size_t>(std::llround(acq_.session_duration() * pulse_.repetition_rate));
    amplitude_ = std::sqrt(std::pow(10.0, pulse_.peak_power_dbm / 10.0));
    const double mean_power = amplitude_ * amplitude_ * static_cast<double>(footprint_);
    noise_sigma_ = std::isinf(acq_.receiver_snr_db)
                       ? 0.0
                       : std::sqrt(mean_power / std::pow(10.0, acq_.receiver_snr_db / 10.0) / 2.0);

    phasors_.resize(eval_count_);
    for (std::size_t i = 0; i < eval_count_; ++i)
        phasors_[i] = field_.phasor(eval_first_ + i);

    laser_phase_.resize(n_pulses_);
    const double step_sigma = std::sqrt(2.0 * std::numbers::pi * laser_.linewidth / pulse_.repetition_rate);
    double phase = 0.0;
    for (std::size_t p = 0; p < n_pulses_; ++p) {
        if (p > 0 && step_sigma > 0.0)
            phase += step_sigma * rng::Stream(rng::key(seed_, rng::Purpose::laser, p)).normal();
        laser_phase_[p] = phase;
    }

    meta_.repetition_rate = pulse_.repetition_rate;
    meta_.adc_rate = acq_.adc_rate;
    meta_.group_index = acq_.group_index;
    meta_.bin_spacing = dz;
    meta_.t0 = 0.0;
    meta_.seed = seed_;
    meta_.layout_hash = perturbation_.layout().hash();
    meta_.pulse_width = pulse_.width;
    meta_.first_bin = gate_first_;
}

void SessionSynthesizer::synthesize_row(std::size_t p, std::span<std::complex<float>> out, Scratch& scratch) const
{
    const double t = meta_.t0 + static_cast<double>(p) / meta_.repetition_rate;
    scratch.psi.resize(eval_count_);
    scratch.prefix.resize(eval_count_ + 1);
    perturbation_.evaluate(t, eval_first_, scratch.psi);

    // Accumulated two-way phase along z, then running sum of scatterer phasors.
    double cumulative = 0.0;
    if (eval_first_ > 0) {
        scratch.upstream.resize(eval_first_);
        perturbation_.evaluate(t, 0, scratch.upstream);
        for (double v : scratch.upstream)
            cumulative += v;
    }
    std::complex<double> rot{1.0, 0.0};
    std::complex<double> acc{0.0, 0.0};
    scratch.prefix[0] = acc;
    for (std::size_t i = 0; i < eval_count_; ++i) {
        cumulative += scratch.psi[i];
        rot = (i % resync_interval == 0) ? std::polar(1.0, cumulative) : rot * expi(scratch.psi[i]);
        acc += phasors_[i] * rot;
        scratch.prefix[i + 1] = acc;
    }
    if (!std::isfinite(cumulative))
        throw DataError("synthesize_session: non-finite perturbation at t = " + std::to_string(t) + " s");

    const std::complex<double> common = amplitude_ * std::polar(1.0, laser_phase_[p]);
    const std::size_t n_fiber = field_.size();
    std::optional<rng::Stream> noise;
    std::size_t block = static_cast<std::size_t>(-1);
    for (std::size_t k = 0; k < gate_count_; ++k) {
        const std::size_t b = gate_first_ + k;
        const std::size_t lo = b - std::min(b, half_lo_);
        const std::size_t hi = std::min(b + half_hi_, n_fiber - 1);
        std::complex<double> s = common * (scratch.prefix[hi + 1 - eval_first_] - scratch.prefix[lo - eval_first_]);
        if (noise_sigma_ > 0.0) {
            if (b / noise_block != block) {
                block = b / noise_block;
                noise.emplace(rng::key(seed_, rng::Purpose::receiver, p, block));
                for (std::size_t skip = 2 * (block * noise_block); skip < 2 * b; ++skip)
                    noise->normal();
            }
            const double re = noise->normal();
            const double im = noise->normal();
            s += noise_sigma_ * std::complex<double>(re, im);
        }
        out[k] = std::complex<float>(static_cast<float>(s.real()), static_cast<float>(s.imag()));
    }
}

void SessionSynthesizer::synthesize(std::size_t p0, std::size_t count, std::span<std::complex<float>> out) const
{
    if (p0 + count > n_pulses_ || out.size() < count * gate_count_)
        throw ArgumentError("synthesize: row range or output buffer out of bounds");
    std::exception_ptr failure;
#pragma omp parallel
    {
        Scratch scratch;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
            try {
                const auto row = static_cast<std::size_t>(i);
                synthesize_row(p0 + row, out.subspan(row * gate_count_, gate_count_), scratch);
            } catch (...) {
#pragma omp critical(phiotdr_synth_failure)
                if (!failure)
                    failure = std::current_exception();
            }
        }
    }
    if (failure)
        std::rethrow_exception(failure);
}

void SessionSynthesizer::synthesize_serial(std::size_t p0, std::size_t count, std::span<std::complex<float>> out) const
{
    if (p0 + count > n_pulses_ || out.size() < count * gate_count_)
        throw ArgumentError("synthesize: row range or output buffer out of bounds");
    Scratch scratch;
    for (std::size_t i = 0; i < count; ++i)
        synthesize_row(p0 + i, out.subspan(i * gate_count_, gate_count_), scratch);
}

TraceMatrix SessionSynthesizer::synthesize_all() const
{
    TraceMatrix m;
    m.meta = meta_;
    m.n_pulses = n_pulses_;
    m.n_bins = gate_count_;
    m.samples.resize(n_pulses_ * gate_count_);
    synthesize(0, n_pulses_, m.samples);
    return m;
}

TraceMatrix synthesize_session(const fiber::ScattererField& field, const fiber::PhasePerturbation& perturbation,
                               const LaserParams& laser, const PulseParams& pulse, const AcquisitionParams& acq,
                               std::uint64_t seed, RangeGate gate)
{
    return SessionSynthesizer(field, perturbation, laser, pulse, acq, seed, gate).synthesize_all();
}

void SessionConfig::validate() const
{
    circuit.validate();
    acoustics.validate();
    scope.validate();
    acquisition.validate();
    layout.validate(acquisition.bin_spacing());
    coupling_presets.validate();
    background.validate();
    laser.validate();
    pulse.validate(acquisition.adc_rate);
}

PreparedSession prepare_session(const SessionConfig& cfg, RangeGate gate)
{
    cfg.validate();
    const auto& acq = cfg.acquisition;
    const double rep = cfg.pulse.repetition_rate;
    check_range(cfg.layout.total_length(), rep, acq.group_index);
    cfg.background.check_nyquist(0.5 * rep);

    std::vector<spark::DischargeEvent> events;
    spark::VoltageTrace hv;
    hv.sample_rate = 1.0 / spark::circuit_time_step;
    const auto n_total = static_cast<std::size_t>(std::llround(acq.session_duration() / spark::circuit_time_step));
    const auto n_base = static_cast<std::size_t>(std::llround(acq.baseline_duration / spark::circuit_time_step));
    hv.samples.assign(n_total, 0.0);
    if (acq.event_duration > 0.0) {
        auto [charging, evs] =
            spark::simulate_charging(cfg.circuit, acq.event_duration, cfg.seed, cfg.layout.discharge_position);
        for (auto& e : evs)
            e.time += acq.baseline_duration;
        events = std::move(evs);
        const std::size_t n_copy = std::min(charging.samples.size(), n_total - std::min(n_total, n_base));
        std::copy_n(charging.samples.begin(), n_copy, hv.samples.begin() + static_cast<std::ptrdiff_t>(n_base));
        // Supply switched off: the capacitor holds its last charge.
        const double hold = n_copy > 0 ? charging.samples[n_copy - 1] : 0.0;
        std::fill(hv.samples.begin() + static_cast<std::ptrdiff_t>(n_base + n_copy), hv.samples.end(), hold);
    }
    spark::VoltageTrace scope_trace;
    scope_trace.sample_rate = cfg.scope.sample_rate;
    if (!hv.samples.empty())
        scope_trace = spark::scope_record(hv, cfg.scope, cfg.seed);
    hv.samples = {};

    // Signatures are generated at a multiple of the pulse rate high enough for the ring tone.
    const double multiple = std::max(1.0, std::ceil(2.0 * cfg.acoustics.ring_frequency / rep - 1e-12));
    const double sig_rate = multiple * rep;
    std::vector<spark::PressureSignal> signatures;
    signatures.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i)
        signatures.push_back(spark::discharge_acoustic_signature(events[i], cfg.acoustics, sig_rate, cfg.seed, i));

    const double dz = acq.bin_spacing();
    auto field = fiber::build_scatterer_field(cfg.layout, dz, cfg.seed);
    auto perturbation = fiber::perturbation_field(events, std::move(signatures),
                                                  cfg.coupling_presets.profile(cfg.coupling), cfg.background,
                                                  cfg.layout, dz, cfg.seed);
    SessionSynthesizer synth(std::move(field), std::move(perturbation), cfg.laser, cfg.pulse, acq, cfg.seed, gate);
    return PreparedSession{std::move(events), std::move(scope_trace), std::move(synth)};
}

ProtocolResult run_protocol(const SessionConfig& cfg, RangeGate gate)
{
    auto prepared = prepare_session(cfg, gate);
    auto traces = prepared.synthesizer.synthesize_all();
    return ProtocolResult{std::move(traces), std::move(prepared.events), std::move(prepared.scope_trace)};
}

// ---------------------------------------------------------------------------

void write_trace_header(std::ostream& out, const TraceMeta& meta, std::uint64_t n_pulses, std::uint64_t n_bins)
{
    out.write(trace_magic, 8);
    binio::put<std::uint32_t>(out, trace_version);
    binio::put<double>(out, meta.adc_rate);
    binio::put<double>(out, meta.repetition_rate);
    binio::put<double>(out, meta.bin_spacing);
    binio::put<double>(out, meta.group_index);
    binio::put<double>(out, meta.t0);
    binio::put<std::uint64_t>(out, n_pulses);
    binio::put<std::uint64_t>(out, n_bins);
    binio::put<std::uint64_t>(out, meta.seed);
}

TraceMeta read_trace_header(std::istream& in, std::uint64_t& n_pulses, std::uint64_t& n_bins)
{
    binio::expect_magic(in, trace_magic);
    const auto version = binio::get<std::uint32_t>(in, "version");
    if (version != trace_version)
        throw FormatError("PHIOTDR1: unsupported version " + std::to_string(version));
    TraceMeta m;
    m.adc_rate = binio::get<double>(in, "adc_rate_hz");
    m.repetition_rate = binio::get<double>(in, "repetition_rate_hz");
    m.bin_spacing = binio::get<double>(in, "bin_spacing_m");
    m.group_index = binio::get<double>(in, "group_index");
    m.t0 = binio::get<double>(in, "t0_s");
    n_pulses = binio::get<std::uint64_t>(in, "n_pulses");
    n_bins = binio::get<std::uint64_t>(in, "n_bins");
    m.seed = binio::get<std::uint64_t>(in, "seed");
    if (!(m.repetition_rate > 0.0) || !(m.bin_spacing > 0.0) || !std::isfinite(m.t0))
        throw FormatError("PHIOTDR1: invalid header values");
    return m;
}

TraceFileWriter::TraceFileWriter(const std::filesystem::path& path, const TraceMeta& meta, std::size_t n_pulses,
                                 std::size_t n_bins)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), n_bins_(n_bins), expected_values_(n_pulses * n_bins)
{
    if (!out_)
        throw IoError("cannot open " + path.string() + " for writing");
    if (meta.first_bin != 0)
        throw ArgumentError("PHIOTDR1 cannot represent a range gate that does not start at bin 0");
    write_trace_header(out_, meta, n_pulses, n_bins);
}

void TraceFileWriter::write_rows(std::span<const std::complex<float>> rows)
{
    if (written_values_ + rows.size() > expected_values_)
        throw ArgumentError("PHIOTDR1 writer: more samples than declared in the header");
    std::vector<float> buf(2 * rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        buf[2 * i] = binio::to_le(rows[i].real());
        buf[2 * i + 1] = binio::to_le(rows[i].imag());
    }
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out_)
        throw IoError("write failed: " + path_.string());
    written_values_ += rows.size();
}

void TraceFileWriter::close()
{
    if (written_values_ != expected_values_)
        throw ArgumentError("PHIOTDR1 writer: fewer samples written than declared");
    out_.close();
    if (!out_)
        throw IoError("close failed: " + path_.string());
}

TraceFileReader::TraceFileReader(const std::filesystem::path& path) : in_(path, std::ios::binary)
{
    if (!in_)
        throw IoError("cannot open " + path.string());
    std::uint64_t np = 0;
    std::uint64_t nb = 0;
    meta_ = read_trace_header(in_, np, nb);
    n_pulses_ = np;
    n_bins_ = nb;
}

std::size_t TraceFileReader::read_rows(std::size_t count, std::span<std::complex<float>> out)
{
    count = std::min(count, n_pulses_ - next_row_);
    const std::size_t n = count * n_bins_;
    if (out.size() < n)
        throw ArgumentError("TraceFileReader: output buffer too small");
    std::vector<float> buf(2 * n);
    if (n > 0 && !in_.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw FormatError("PHIOTDR1: truncated payload");
    for (std::size_t i = 0; i < n; ++i)
        out[i] = {binio::to_le(buf[2 * i]), binio::to_le(buf[2 * i + 1])};
    next_row_ += count;
    return count;
}

void write_trace(const std::filesystem::path& path, const TraceMatrix& traces)
{
    TraceFileWriter w(path, traces.meta, traces.n_pulses, traces.n_bins);
    w.write_rows(traces.samples);
    w.close();
}

TraceMatrix read_trace(const std::filesystem::path& path)
{
    TraceFileReader r(path);
    TraceMatrix m;
    m.meta = r.meta();
    m.n_pulses = r.n_pulses();
    m.n_bins = r.n_bins();
    m.samples.resize(m.n_pulses * m.n_bins);
    r.read_rows(m.n_pulses, m.samples);
    return m;
}

}  // namespace phiotdr::interrogator
