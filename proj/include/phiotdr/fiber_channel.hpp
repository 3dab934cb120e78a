// SPDX-License-Identifier: Apache-2.0
//
// Fiber under test: segment layout, the frozen Rayleigh scatterer field, and
// the time-varying optical phase perturbation (discharge coupling plus the
// laboratory background) that the interrogator integrates along the fiber.
#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "phiotdr/spark_gen.hpp"

namespace phiotdr::fiber {

struct Segment {
    std::string name;
    double length = 0.0;          ///< [m]
    double group_index = 1.468;
};

struct FiberLayout {
    std::vector<Segment> segments;
    double discharge_position = 1080.0; ///< metres from the interrogator
    double sensor_extent = 2.0;         ///< fiber length exposed to the pressure wave [m]

    double total_length() const noexcept;

    /// Throws ConstructionError. `bin_spacing` enables the sensor_extent >= spacing check.
    void validate(std::optional<double> bin_spacing = std::nullopt) const;

    /// Stable 64-bit digest of the layout (metadata only).
    std::uint64_t hash() const noexcept;
};

/// Launch 1000 m + sensor 100 m + tail 500 m, discharge at 1080 m.
FiberLayout default_layout();

enum class CouplingName { lab_straight, lab_coiled_13, opgw_straight, opgw_coiled_4 };

std::string_view to_string(CouplingName n) noexcept;
CouplingName parse_coupling_name(std::string_view s);

struct CouplingProfile {
    CouplingName name = CouplingName::opgw_straight;
    double peak_phase_response = 0.5; ///< [rad] per unit-peak pressure signature
};

/// The four tested fiber configurations. The ordering
/// lab_coiled_13 > lab_straight > opgw_coiled_4 > opgw_straight is enforced.
struct CouplingPresets {
    double lab_coiled_13 = 2.0;
    double lab_straight = 1.2;
    double opgw_coiled_4 = 0.7;
    double opgw_straight = 0.5;

    void validate() const;
    CouplingProfile profile(CouplingName name) const;
};

struct ScattererField {
    double bin_spacing = 0.0;
    std::vector<std::complex<double>> reflectivities; ///< circular Gaussian, unit mean power
    std::vector<double> static_phases;                ///< uniform on [0, 2pi)
    std::uint64_t seed = 0;

    std::size_t size() const noexcept { return reflectivities.size(); }

    /// r_j * exp(i * theta_j)
    std::complex<double> phasor(std::size_t j) const noexcept;
};

/// Number of bins covering `length` at `spacing`: ceil(length / spacing).
std::size_t bin_count(double length, double spacing);

ScattererField build_scatterer_field(const FiberLayout& layout, double bin_spacing, std::uint64_t seed);

struct Tone {
    double frequency = 0.0; ///< [Hz]
    double amplitude = 0.0; ///< [rad]
};

/// Laboratory background applied at every position. Amplitudes are expressed
/// as the phase accumulated over `reference_length` of fiber: a tone of
/// amplitude A adds A * bin_spacing / reference_length per bin, and the
/// broadband floor adds floor * sqrt(bin_spacing / reference_length) rms per
/// bin, so a gauge of reference_length sees the stated values.
struct BackgroundNoise {
    std::vector<Tone> tones{{100.0, 0.05}, {200.0, 0.05}, {4500.0, 0.03}, {5500.0, 0.03}};
    double broadband_floor = 0.01; ///< [rad rms]
    double reference_length = 10.0; ///< [m]

    void validate() const;
    /// Throws ArgumentError when a tone sits at or above `nyquist`.
    void check_nyquist(double nyquist) const;

    static BackgroundNoise none() { return BackgroundNoise{{}, 0.0, 10.0}; }
};

/// Two-way optical phase perturbation psi(t, bin) per bin. The interrogator
/// accumulates it along the fiber; a localised perturbation therefore shows up
/// only in gauges that span it.
class PhasePerturbation {
public:
    PhasePerturbation(std::vector<spark::DischargeEvent> events, std::vector<spark::PressureSignal> signatures,
                      CouplingProfile coupling, BackgroundNoise background, FiberLayout layout, double bin_spacing,
                      std::uint64_t seed);

    /// psi for bins [first_bin, first_bin + out.size()) at time t.
    void evaluate(double t, std::size_t first_bin, std::span<double> out) const;

    double at(double t, std::size_t bin) const;

    /// Discharge contribution summed over the sensor extent (ground truth).
    double discharge_phase(double t) const;

    /// psi restricted to the background (tones + floor) at one bin.
    double background_at(double t, std::size_t bin) const;

    std::size_t bin_count() const noexcept { return n_bins_; }
    double bin_spacing() const noexcept { return bin_spacing_; }
    std::size_t sensor_first() const noexcept { return sensor_first_; }
    std::size_t sensor_last() const noexcept { return sensor_last_; }
    const FiberLayout& layout() const noexcept { return layout_; }
    const BackgroundNoise& background() const noexcept { return background_; }
    const CouplingProfile& coupling() const noexcept { return coupling_; }
    const std::vector<spark::DischargeEvent>& events() const noexcept { return events_; }

    /// Throws DataError naming the offending time when psi is not finite.
    void check_finite(double t) const;

private:
    double tone_per_bin(double t) const noexcept;

    std::vector<spark::DischargeEvent> events_;
    std::vector<spark::PressureSignal> signatures_;
    CouplingProfile coupling_;
    BackgroundNoise background_;
    FiberLayout layout_;
    double bin_spacing_;
    std::uint64_t seed_;
    std::size_t n_bins_;
    std::size_t sensor_first_ = 0;
    std::size_t sensor_last_ = 0; ///< inclusive
    double max_signature_duration_ = 0.0;
    double floor_per_bin_ = 0.0;
    double tone_scale_ = 0.0;
};

PhasePerturbation perturbation_field(std::vector<spark::DischargeEvent> events,
                                     std::vector<spark::PressureSignal> signatures, const CouplingProfile& coupling,
                                     const BackgroundNoise& background, const FiberLayout& layout, double bin_spacing,
                                     std::uint64_t seed);

}  // namespace phiotdr::fiber
