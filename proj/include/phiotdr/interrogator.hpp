// SPDX-License-Identifier: Apache-2.0
//
// Coherent phi-OTDR acquisition synthesis: per-pulse Rayleigh backscatter with
// accumulated perturbation phase, laser phase noise and receiver noise,
// sampled into a pulses x range-bins TraceMatrix.
#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "phiotdr/fiber_channel.hpp"
#include "phiotdr/spark_gen.hpp"

namespace phiotdr::interrogator {

inline constexpr double speed_of_light = 299792458.0;

struct LaserParams {
    double wavelength = 1550e-9;
    double linewidth = 1000.0; ///< [Hz], Wiener phase noise; 0 disables it

    void validate() const;
};

struct PulseParams {
    double repetition_rate = 15000.0;
    double width = 100e-9;
    double peak_power_dbm = 10.0; ///< amplitude scale only

    void validate(double adc_rate) const;
    /// round(width * adc_rate) range bins.
    std::size_t footprint_bins(double adc_rate) const;
};

struct AcquisitionParams {
    double adc_rate = 250e6;
    double group_index = 1.468;
    double receiver_snr_db = 40.0; ///< mean backscatter power / complex noise power; +inf = noiseless
    double baseline_duration = 5.0;
    double event_duration = 10.0;
    double post_duration = 5.0;

    void validate() const;
    double session_duration() const noexcept { return baseline_duration + event_duration + post_duration; }
    /// c / (2 n f_adc)
    double bin_spacing() const noexcept;
};

/// Optional restriction of synthesis to bins [first_bin, first_bin + bin_count).
/// Phase accumulated upstream of the gate is still evaluated, so gated rows equal
/// the matching slice of a full acquisition.
struct RangeGate {
    std::size_t first_bin = 0;
    std::size_t bin_count = 0; ///< 0 = up to the fiber end
};

struct TraceMeta {
    double repetition_rate = 0.0;
    double adc_rate = 0.0;
    double group_index = 0.0;
    double bin_spacing = 0.0;
    double t0 = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t layout_hash = 0;
    double pulse_width = 0.0;  ///< 0 when unknown (read from file)
    std::size_t first_bin = 0; ///< absolute index of column 0
};

struct TraceMatrix {
    TraceMeta meta;
    std::size_t n_pulses = 0;
    std::size_t n_bins = 0;
    std::vector<std::complex<float>> samples; ///< row-major by pulse

    double pulse_time(std::size_t p) const noexcept
    {
        return meta.t0 + static_cast<double>(p) / meta.repetition_rate;
    }
    std::vector<double> pulse_times() const;
    std::span<const std::complex<float>> row(std::size_t p) const noexcept
    {
        return {samples.data() + p * n_bins, n_bins};
    }
    std::span<std::complex<float>> row(std::size_t p) noexcept { return {samples.data() + p * n_bins, n_bins}; }
};

/// c / (2 * group_index * repetition_rate)
double max_unambiguous_range(double repetition_rate, double group_index);

/// Throws RangeError when the fiber does not fit in one pulse period.
void check_range(double fiber_length, double repetition_rate, double group_index);

/// Generates TraceMatrix rows on demand; any pulse range can be produced in
/// any order with identical results.
class SessionSynthesizer {
public:
    SessionSynthesizer(fiber::ScattererField field, fiber::PhasePerturbation perturbation, LaserParams laser,
                       PulseParams pulse, AcquisitionParams acq, std::uint64_t seed, RangeGate gate = {});

    std::size_t n_pulses() const noexcept { return n_pulses_; }
    std::size_t n_bins() const noexcept { return gate_count_; }
    std::size_t footprint() const noexcept { return footprint_; }
    const TraceMeta& meta() const noexcept { return meta_; }
    const fiber::PhasePerturbation& perturbation() const noexcept { return perturbation_; }
    const fiber::ScattererField& field() const noexcept { return field_; }
    /// Per-quadrature receiver noise standard deviation.
    double noise_sigma() const noexcept { return noise_sigma_; }
    double laser_phase(std::size_t p) const noexcept { return laser_phase_[p]; }

    /// Rows [p0, p0 + count) into out (count * n_bins samples), pulses in parallel.
    void synthesize(std::size_t p0, std::size_t count, std::span<std::complex<float>> out) const;
    /// Single-threaded reference for synthesize.
    void synthesize_serial(std::size_t p0, std::size_t count, std::span<std::complex<float>> out) const;

    TraceMatrix synthesize_all() const;

private:
    struct Scratch {
        std::vector<double> psi;
        std::vector<double> upstream;
        std::vector<std::complex<double>> prefix;
    };
    void synthesize_row(std::size_t p, std::span<std::complex<float>> out, Scratch& scratch) const;

    fiber::ScattererField field_;
    fiber::PhasePerturbation perturbation_;
    LaserParams laser_;
    PulseParams pulse_;
    AcquisitionParams acq_;
    std::uint64_t seed_;
    TraceMeta meta_;
    std::size_t n_pulses_ = 0;
    std::size_t footprint_ = 1;
    std::size_t half_lo_ = 0;
    std::size_t half_hi_ = 0;
    std::size_t gate_first_ = 0;
    std::size_t gate_count_ = 0;
    std::size_t eval_first_ = 0;
    std::size_t eval_count_ = 0;
    double amplitude_ = 1.0;
    double noise_sigma_ = 0.0;
    std::vector<double> laser_phase_;
    std::vector<std::complex<double>> phasors_; ///< scatterer phasors over the evaluated bins
};

TraceMatrix synthesize_session(const fiber::ScattererField& field, const fiber::PhasePerturbation& perturbation,
                               const LaserParams& laser, const PulseParams& pulse, const AcquisitionParams& acq,
                               std::uint64_t seed, RangeGate gate = {});

/// Everything needed to run the baseline / event / post protocol.
struct SessionConfig {
    spark::CircuitParams circuit;
    spark::AcousticParams acoustics;
    spark::ScopeParams scope;
    fiber::FiberLayout layout = fiber::default_layout();
    fiber::CouplingName coupling = fiber::CouplingName::opgw_straight;
    fiber::CouplingPresets coupling_presets;
    fiber::BackgroundNoise background;
    LaserParams laser;
    PulseParams pulse;
    AcquisitionParams acquisition;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Ground truth and synthesizer for one protocol run, without materialising the traces.
struct PreparedSession {
    std::vector<spark::DischargeEvent> events;
    spark::VoltageTrace scope_trace; ///< probe side, covers the whole session
    SessionSynthesizer synthesizer;
};

/// Spark rig runs only inside [baseline, baseline + event_duration).
PreparedSession prepare_session(const SessionConfig& cfg, RangeGate gate = {});

struct ProtocolResult {
    TraceMatrix traces;
    std::vector<spark::DischargeEvent> events;
    spark::VoltageTrace scope_trace;
};

ProtocolResult run_protocol(const SessionConfig& cfg, RangeGate gate = {});

// PHIOTDR1 file format ------------------------------------------------------

inline constexpr char trace_magic[9] = "PHIOTDR1";
inline constexpr std::uint32_t trace_version = 1;

void write_trace_header(std::ostream& out, const TraceMeta& meta, std::uint64_t n_pulses, std::uint64_t n_bins);
/// Reads and validates magic/version; returns metadata and dimensions.
TraceMeta read_trace_header(std::istream& in, std::uint64_t& n_pulses, std::uint64_t& n_bins);

void write_trace(const std::filesystem::path& path, const TraceMatrix& traces);
TraceMatrix read_trace(const std::filesystem::path& path);

/// Streams rows of a PHIOTDR1 file.
class TraceFileReader {
public:
    explicit TraceFileReader(const std::filesystem::path& path);
    const TraceMeta& meta() const noexcept { return meta_; }
    std::size_t n_pulses() const noexcept { return n_pulses_; }
    std::size_t n_bins() const noexcept { return n_bins_; }
    /// Reads the next `count` rows; returns the number read.
    std::size_t read_rows(std::size_t count, std::span<std::complex<float>> out);

private:
    std::ifstream in_;
    TraceMeta meta_;
    std::size_t n_pulses_ = 0;
    std::size_t n_bins_ = 0;
    std::size_t next_row_ = 0;
};

/// Writes a PHIOTDR1 file row block by row block.
class TraceFileWriter {
public:
    TraceFileWriter(const std::filesystem::path& path, const TraceMeta& meta, std::size_t n_pulses,
                    std::size_t n_bins);
    void write_rows(std::span<const std::complex<float>> rows);
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t n_bins_;
    std::size_t expected_values_;
    std::size_t written_values_ = 0;
};

}  // namespace phiotdr::interrogator
