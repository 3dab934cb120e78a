// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/spark_gen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include "phiotdr/error.hpp"
#include "phiotdr/rng.hpp"

namespace phiotdr::spark {

namespace {

bool positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void CircuitParams::validate() const
{
    if (!positive(supply_peak_voltage) || !positive(supply_frequency) || !positive(charging_resistance) ||
        !positive(discharge_capacitance) || !positive(breakdown_voltage_mean) || !positive(collapse_time_constant))
        throw ConstructionError("circuit: physical quantities must be finite and > 0");
    if (!std::isfinite(residual_voltage) || residual_voltage < 0.0)
        throw ConstructionError("circuit: residual_voltage must be >= 0");
    if (!(breakdown_voltage_mean < supply_peak_voltage))
        throw ConstructionError("circuit: breakdown_voltage_mean must be below supply_peak_voltage, "
                                "otherwise the gap never breaks down");
    if (!(residual_voltage < breakdown_voltage_mean))
        throw ConstructionError("circuit: residual_voltage must be below breakdown_voltage_mean");
    if (!(breakdown_voltage_jitter >= 0.0 && breakdown_voltage_jitter <= 0.2))
        throw ConstructionError("circuit: breakdown_voltage_jitter must lie in [0, 0.2]");
}

double CircuitParams::charge_time(double breakdown_voltage) const
{
    return time_constant() *
           std::log((supply_peak_voltage - residual_voltage) / (supply_peak_voltage - breakdown_voltage));
}

void AcousticParams::validate() const
{
    // broadband_decay may be +inf (flat envelope); everything else finite.
    if (!positive(burst_duration) || !(broadband_decay > 0.0) || !positive(ring_frequency) || !positive(ring_decay))
        throw ConstructionError("acoustics: durations and frequencies must be > 0");
    if (!std::isfinite(ring_to_broadband_ratio) || ring_to_broadband_ratio < 0.0)
        throw ConstructionError("acoustics: ring_to_broadband_ratio must be >= 0");
    if (std::isfinite(broadband_decay) && burst_duration < broadband_decay)
        throw ConstructionError("acoustics: burst_duration must be >= broadband_decay");
}

double PressureSignal::at(double tau) const noexcept
{
    if (!(tau >= 0.0))
        return 0.0;
    const double pos = tau * sample_rate;
    if (pos >= static_cast<double>(samples.size()))
        return 0.0;
    return samples[static_cast<std::size_t>(pos)];
}

void ScopeParams::validate() const
{
    if (!(std::isfinite(divider_ratio) && divider_ratio >= 1.0))
        throw ConstructionError("scope: divider_ratio must be >= 1");
    if (!positive(sample_rate))
        throw ConstructionError("scope: sample_rate must be > 0");
    if (adc_bits < 6 || adc_bits > 16)
        throw ConstructionError("scope: adc_bits must lie in [6, 16]");
    if (!std::isfinite(noise_rms) || noise_rms < 0.0)
        throw ConstructionError("scope: noise_rms must be >= 0");
    if (!(std::isfinite(full_scale_min) && std::isfinite(full_scale_max) && full_scale_min < full_scale_max))
        throw ConstructionError("scope: full scale range must be non-empty");
}

double ScopeParams::lsb() const noexcept
{
    return (full_scale_max - full_scale_min) / static_cast<double>((1u << adc_bits) - 1u);
}

std::pair<VoltageTrace, std::vector<DischargeEvent>> simulate_charging(const CircuitParams& params, double duration,
                                                                       std::uint64_t seed, double fiber_position)
{
    params.validate();
    if (!std::isfinite(duration))
        throw ArgumentError("simulate_charging: duration must be finite");
    if (duration < 0.0)
        throw ArgumentError("simulate_charging: duration must be >= 0");

    const double vdc = params.supply_peak_voltage;
    const double vres = params.residual_voltage;
    const double tau = params.time_constant();
    const double tau_c = params.collapse_time_constant;
    const double sigma = params.breakdown_voltage_jitter * params.breakdown_voltage_mean;
    // Keep sampled breakdown voltages strictly between the residual level and the supply.
    const double v_lo = vres + 1e-6 * params.breakdown_voltage_mean;
    const double v_hi = vdc * (1.0 - 1e-6);

    std::vector<DischargeEvent> events;
    double t_start = 0.0;
    double v_start = 0.0;  // capacitor starts uncharged
    for (std::uint64_t idx = 0;; ++idx) {
        rng::Stream s(rng::key(seed, rng::Purpose::breakdown, idx));
        const double v_bd = std::clamp(params.breakdown_voltage_mean + sigma * s.normal(), std::max(v_lo, v_start + 1e-9), v_hi);
        const double t_bd = t_start + tau * std::log((vdc - v_start) / (vdc - v_bd));
        if (!(t_bd < duration))
            break;
        const double c = params.discharge_capacitance;
        events.push_back({t_bd, v_bd, 0.5 * c * v_bd * v_bd, fiber_position});
        t_start = t_bd;
        v_start = vres;
    }

    VoltageTrace trace;
    trace.sample_rate = 1.0 / circuit_time_step;
    trace.start_time = 0.0;
    const auto n = static_cast<std::size_t>(std::floor(duration / circuit_time_step + 0.5));
    trace.samples.resize(n);
    std::size_t next = 0;  // first event not yet passed
    for (std::size_t i = 0; i < n; ++i) {
        const double t = trace.time_at(i);
        while (next < events.size() && events[next].time <= t)
            ++next;
        double v;
        if (next == 0) {
            v = vdc - vdc * std::exp(-t / tau);
        } else {
            const auto& e = events[next - 1];
            const double dt = t - e.time;
            v = vdc - (vdc - vres) * std::exp(-dt / tau) + (e.breakdown_voltage - vres) * std::exp(-dt / tau_c);
        }
        trace.samples[i] = v;
    }
    return {std::move(trace), std::move(events)};
}

PressureSignal discharge_acoustic_signature(const DischargeEvent& event, const AcousticParams& acoustics,
                                            double sample_rate, std::uint64_t seed, std::uint64_t event_index)
{
    (void)event;  // the waveform shape does not depend on the breakdown energy; coupling scales it later
    acoustics.validate();
    if (!positive(sample_rate) || sample_rate < 2.0 * acoustics.ring_frequency)
        throw ArgumentError("discharge_acoustic_signature: sample_rate must be >= 2 * ring_frequency");

    PressureSignal sig;
    sig.sample_rate = sample_rate;
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(acoustics.burst_duration * sample_rate)));
    sig.samples.resize(n);

    rng::Stream s(rng::key(seed, rng::Purpose::acoustic, event_index));
    const double w = 2.0 * std::numbers::pi * acoustics.ring_frequency;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double broadband = s.normal() * std::exp(-t / acoustics.broadband_decay);
        const double ring = acoustics.ring_to_broadband_ratio * std::sin(w * t) * std::exp(-t / acoustics.ring_decay);
        sig.samples[i] = broadband + ring;
        peak = std::max(peak, std::abs(sig.samples[i]));
    }
    if (peak > 0.0)
        for (auto& x : sig.samples)
            x /= peak;
    return sig;
}

VoltageTrace scope_record(const VoltageTrace& trace, const ScopeParams& scope, std::uint64_t seed)
{
    scope.validate();
    if (trace.samples.empty())
        throw ArgumentError("scope_record: empty trace");
    if (!positive(trace.sample_rate))
        throw ArgumentError("scope_record: trace sample_rate must be > 0");

    VoltageTrace out;
    out.sample_rate = scope.sample_rate;
    out.start_time = trace.start_time;
    const double span = static_cast<double>(trace.samples.size() - 1) / trace.sample_rate;
    const auto n = static_cast<std::size_t>(std::floor(span * scope.sample_rate + 1e-9)) + 1;
    out.samples.resize(n);

    rng::Stream noise(rng::key(seed, rng::Purpose::scope));
    const double lsb = scope.lsb();
    const double max_code = static_cast<double>((1u << scope.adc_bits) - 1u);
    const std::size_t last = trace.samples.size() - 1;
    for (std::size_t j = 0; j < n; ++j) {
        const double pos = static_cast<double>(j) / scope.sample_rate * trace.sample_rate;
        const auto i0 = std::min(static_cast<std::size_t>(pos), last);
        const std::size_t i1 = std::min(i0 + 1, last);
        const double frac = pos - static_cast<double>(i0);
        double v = (trace.samples[i0] + frac * (trace.samples[i1] - trace.samples[i0])) / scope.divider_ratio;
        if (scope.noise_rms > 0.0)
            v += scope.noise_rms * noise.normal();
        if (v < scope.full_scale_min || v > scope.full_scale_max)
            out.clipped = true;
        const double code = std::clamp(std::round((v - scope.full_scale_min) / lsb), 0.0, max_code);
        out.samples[j] = scope.full_scale_min + code * lsb;
    }
    return out;
}

void write_voltage_csv(std::ostream& out, const VoltageTrace& trace)
{
    out << "time_s,voltage_V\n";
    std::string buf;
    buf.reserve(1 << 20);
    char line[96];
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        char* p = line;
        p = std::to_chars(p, line + sizeof line, trace.time_at(i), std::chars_format::fixed, 9).ptr;
        *p++ = ',';
        p = std::to_chars(p, line + sizeof line, trace.samples[i], std::chars_format::general, 10).ptr;
        *p++ = '\n';
        buf.append(line, p);
        if (buf.size() > (1 << 20) - 128) {
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
            buf.clear();
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_voltage_csv(const std::filesystem::path& path, const VoltageTrace& trace)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open " + path.string() + " for writing");
    write_voltage_csv(f, trace);
    if (!f)
        throw IoError("write failed: " + path.string());
}

VoltageTrace read_voltage_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("voltage csv: missing header");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "time_s,voltage_V")
        throw FormatError("voltage csv: expected header 'time_s,voltage_V', got '" + line + "'");

    std::vector<double> times;
    VoltageTrace trace;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw FormatError("voltage csv: row " + std::to_string(row) + " has no comma");
        double t = 0.0;
        double v = 0.0;
        const char* b = line.data();
        auto r1 = std::from_chars(b, b + comma, t);
        auto r2 = std::from_chars(b + comma + 1, b + line.size(), v);
        if (r1.ec != std::errc{} || r2.ec != std::errc{} || !std::isfinite(t) || !std::isfinite(v))
            throw FormatError("voltage csv: row " + std::to_string(row) + " is not two finite numbers");
        times.push_back(t);
        trace.samples.push_back(v);
    }
    if (!times.empty())
        trace.start_time = times.front();
    if (times.size() >= 2) {
        const double span = times.back() - times.front();
        if (!(span > 0.0))
            throw FormatError("voltage csv: time column must increase");
        trace.sample_rate = static_cast<double>(times.size() - 1) / span;
    }
    return trace;
}

VoltageTrace read_voltage_csv(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open " + path.string());
    return read_voltage_csv(f);
}

}  // namespace phiotdr::spark
