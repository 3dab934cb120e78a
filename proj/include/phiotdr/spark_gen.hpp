// SPDX-License-Identifier: Apache-2.0
//
// High-voltage spark-gap rig: RC charging of the discharge capacitor from a
// rectified supply, stochastic breakdowns, the acoustic burst each breakdown
// emits, and the HV-probe / oscilloscope recording of the capacitor voltage.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace phiotdr::spark {

struct CircuitParams {
    double supply_peak_voltage = 30e3;   ///< V_dc after rectification [V]
    double supply_frequency = 50.0;      ///< [Hz]; informational, ripple is not modelled
    double charging_resistance = 6.36e6; ///< R3 [ohm]
    double discharge_capacitance = 10e-9;///< C2 [F]
    double breakdown_voltage_mean = 25e3;///< [V]
    double breakdown_voltage_jitter = 0.02; ///< std of per-event draw, fraction of mean
    double residual_voltage = 0.0;       ///< voltage after collapse [V]
    double collapse_time_constant = 5e-6;///< [s]

    /// Throws ConstructionError when an invariant is violated.
    void validate() const;

    double time_constant() const noexcept { return charging_resistance * discharge_capacitance; }

    /// Closed-form charge time from residual_voltage up to a breakdown voltage.
    double charge_time(double breakdown_voltage) const;
};

struct DischargeEvent {
    double time = 0.0;              ///< seconds since session start
    double breakdown_voltage = 0.0; ///< [V]
    double energy = 0.0;            ///< 0.5 * C2 * V^2 [J]
    double fiber_position = 0.0;    ///< metres along the fiber
};

struct VoltageTrace {
    double sample_rate = 1.0;
    double start_time = 0.0;
    std::vector<double> samples;
    bool clipped = false; ///< set by scope_record when the ADC range was exceeded

    double time_at(std::size_t i) const noexcept { return start_time + static_cast<double>(i) / sample_rate; }
};

struct AcousticParams {
    double burst_duration = 5e-3;
    double broadband_decay = 1e-3;
    double ring_frequency = 3e3;
    double ring_decay = 2e-3;
    double ring_to_broadband_ratio = 0.5;

    void validate() const;
};

/// Unit-peak pressure waveform sampled at sample_rate, starting at the breakdown instant.
struct PressureSignal {
    double sample_rate = 1.0;
    std::vector<double> samples;

    double duration() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }

    /// Sample-and-hold evaluation at delay tau after the breakdown; zero outside the burst.
    double at(double tau) const noexcept;
};

struct ScopeParams {
    double divider_ratio = 1000.0;
    double sample_rate = 1e6;
    int adc_bits = 8;
    double noise_rms = 0.01;       ///< [V] at probe output
    double full_scale_min = -5.0;  ///< ADC range at probe output [V]
    double full_scale_max = 35.0;

    void validate() const;
    double lsb() const noexcept;
};

/// Charging/breakdown simulation over [0, duration). Trace sampled on a fixed
/// 1 us grid; breakdown instants are solved analytically.
std::pair<VoltageTrace, std::vector<DischargeEvent>> simulate_charging(const CircuitParams& params, double duration,
                                                                       std::uint64_t seed,
                                                                       double fiber_position = 0.0);

/// Simulation time step of simulate_charging [s].
inline constexpr double circuit_time_step = 1e-6;

/// Noise burst plus decaying ring tone, normalised to unit peak. `seed` and the
/// event index select the noise realisation.
PressureSignal discharge_acoustic_signature(const DischargeEvent& event, const AcousticParams& acoustics,
                                            double sample_rate, std::uint64_t seed, std::uint64_t event_index = 0);

/// Probe-side recording: divide, resample (linear), add noise, quantise.
VoltageTrace scope_record(const VoltageTrace& trace, const ScopeParams& scope, std::uint64_t seed);

/// CSV with header `time_s,voltage_V`.
void write_voltage_csv(std::ostream& out, const VoltageTrace& trace);
void write_voltage_csv(const std::filesystem::path& path, const VoltageTrace& trace);

/// Reads the two-column CSV; the sample rate is inferred from the time column.
VoltageTrace read_voltage_csv(std::istream& in);
VoltageTrace read_voltage_csv(const std::filesystem::path& path);

}  // namespace phiotdr::spark
