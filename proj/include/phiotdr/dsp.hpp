// SPDX-License-Identifier: Apache-2.0
//
// Phase observables derived from a TraceMatrix: gauge-differential phase with
// temporal unwrapping, rolling-activity maps, STFT spectrograms and
// band-limited noise injection.
//
// Every transform exists in two forms: a whole-matrix function operating on
// in-memory data, and a row-streaming engine used by the CLI so sessions that
// do not fit in memory can still be processed. The whole-matrix functions are
// thin wrappers over the streaming engines.
#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <span>
#include <vector>

#include "phiotdr/interrogator.hpp"

namespace phiotdr::dsp {

using interrogator::TraceMatrix;
using interrogator::TraceMeta;

/// Wraps to (-pi, pi].
double wrap_phase(double x) noexcept;

/// One-dimensional temporal unwrap: whenever a step exceeds pi in magnitude the
/// appropriate multiple of 2 pi is added to the remainder of the series.
std::vector<double> unwrap_time(std::span<const double> series);

/// Differential phase of one row of raw per-bin phases:
/// out[k] = wrap(raw[k + gauge_bins] - raw[k]).
void differential_from_phases(std::span<const double> raw, std::size_t gauge_bins, std::span<double> out);

struct PhaseOptions {
    /// Samples whose magnitude is below this fraction of the trace rms amplitude
    /// are treated as faded and masked.
    double fade_fraction = 0.3;
    /// Number of leading pulses used to estimate the rms amplitude.
    std::size_t reference_rows = 16;
};

struct PhaseMatrix {
    TraceMeta meta;
    double gauge_length = 0.0;  ///< requested [m]
    std::size_t gauge_bins = 0; ///< effective gauge = gauge_bins * bin_spacing
    std::size_t n_pulses = 0;
    std::size_t n_cols = 0;
    std::vector<float> values;  ///< radians, row-major by pulse
    std::vector<std::uint8_t> mask; ///< 1 = low-amplitude cell (value held from the last valid one)

    double pulse_time(std::size_t p) const noexcept
    {
        return meta.t0 + static_cast<double>(p) / meta.repetition_rate;
    }
    std::vector<double> pulse_times() const;
    double effective_gauge() const noexcept { return static_cast<double>(gauge_bins) * meta.bin_spacing; }
    /// Fiber position of column k: midpoint of the two bins it differences.
    double column_position(std::size_t k) const noexcept;
    std::size_t nearest_column(double position) const noexcept;
    std::vector<double> column(std::size_t k) const;
    std::size_t masked_count(std::size_t k) const;
};

/// gauge_bins = round(gauge_length / bin_spacing); throws ArgumentError unless 1 <= gauge_bins < n_bins.
std::size_t gauge_bins_for(double gauge_length, double bin_spacing, std::size_t n_bins);

/// Streaming differential-phase engine; carries the per-column unwrap state
/// between row blocks.
class DifferentialPhaser {
public:
    DifferentialPhaser(const TraceMeta& meta, std::size_t n_bins, double gauge_length, PhaseOptions options = {});

    std::size_t gauge_bins() const noexcept { return gauge_bins_; }
    std::size_t n_cols() const noexcept { return n_cols_; }
    double amplitude_threshold() const noexcept { return threshold_; }
    /// Header-only PhaseMatrix (no values) describing the output.
    PhaseMatrix describe(std::size_t n_pulses) const;

    /// Consumes `n_rows` trace rows; writes n_rows * n_cols values and mask cells.
    void process(std::span<const std::complex<float>> rows, std::size_t n_rows, std::span<float> values,
                 std::span<std::uint8_t> mask);
    /// Single-threaded reference for process.
    void process_serial(std::span<const std::complex<float>> rows, std::size_t n_rows, std::span<float> values,
                        std::span<std::uint8_t> mask);

private:
    struct ColumnState {
        double last_wrapped = 0.0;
        double held = 0.0;
        std::int64_t turns = 0;
        bool started = false;
    };
    void calibrate(std::span<const std::complex<float>> rows, std::size_t n_rows);
    void raw_phases(std::span<const std::complex<float>> rows, std::size_t r0, std::size_t r1,
                    std::vector<double>& raw, std::vector<std::uint8_t>& faded) const;
    void unwrap_columns(std::size_t c0, std::size_t c1, std::size_t n_rows, const std::vector<double>& raw,
                        const std::vector<std::uint8_t>& faded, std::span<float> values, std::span<std::uint8_t> mask);

    TraceMeta meta_;
    std::size_t n_bins_;
    double gauge_length_;
    std::size_t gauge_bins_;
    std::size_t n_cols_;
    PhaseOptions options_;
    double threshold_ = -1.0;
    std::vector<ColumnState> state_;
    std::vector<double> raw_;
    std::vector<std::uint8_t> faded_;
};

PhaseMatrix differential_phase(const TraceMatrix& traces, double gauge_length, PhaseOptions options = {});

struct ActivityMap {
    std::size_t n_windows = 0;
    std::size_t n_cols = 0;
    std::vector<float> values;       ///< rolling std [rad], row-major by window
    std::vector<std::uint8_t> valid; ///< 0 = fewer than 80% unmasked cells in the window
    double window_duration = 0.0;
    double hop = 0.0;
    std::size_t window_pulses = 0;
    std::size_t hop_pulses = 0;
    double t0 = 0.0;
    double repetition_rate = 0.0;
    double column_origin = 0.0; ///< fiber position of column 0 [m]
    double bin_spacing = 0.0;

    float at(std::size_t w, std::size_t c) const noexcept { return values[w * n_cols + c]; }
    bool is_valid(std::size_t w, std::size_t c) const noexcept { return valid[w * n_cols + c] != 0; }
    double window_center(std::size_t w) const noexcept;
    double column_position(std::size_t c) const noexcept
    {
        return column_origin + static_cast<double>(c) * bin_spacing;
    }
    std::size_t nearest_column(double position) const noexcept;
};

/// Minimum fraction of unmasked cells for an activity window to count.
inline constexpr double activity_min_valid_fraction = 0.8;

/// Streaming rolling-std engine over phase rows.
class ActivityAccumulator {
public:
    /// `shape` supplies geometry and timing (values may be empty).
    ActivityAccumulator(const PhaseMatrix& shape, double window, double hop);

    std::size_t window_pulses() const noexcept { return window_; }
    std::size_t hop_pulses() const noexcept { return hop_; }
    std::size_t expected_windows() const noexcept { return expected_windows_; }

    /// Consumes n_rows phase rows; completed windows are appended to the map.
    void push(std::span<const float> values, std::span<const std::uint8_t> mask, std::size_t n_rows);
    /// Serial reference of push.
    void push_serial(std::span<const float> values, std::span<const std::uint8_t> mask, std::size_t n_rows);

    const ActivityMap& map() const noexcept { return map_; }
    ActivityMap take() { return std::move(map_); }

private:
    void emit(bool parallel);

    std::size_t n_cols_;
    std::size_t window_;
    std::size_t hop_;
    std::size_t expected_windows_;
    std::size_t rows_seen_ = 0;
    std::vector<float> ring_values_;
    std::vector<std::uint8_t> ring_mask_;
    ActivityMap map_;
};

ActivityMap activity_map(const PhaseMatrix& phase, double window, double hop);

enum class WindowKind { hann };

struct Spectrogram {
    std::size_t n_frames = 0;
    std::size_t n_freq = 0;
    std::vector<double> magnitudes_db; ///< 10 log10(power), floored at -120 dB; row-major by frame
    std::vector<double> power;         ///< linear one-sided power / (L * sum w^2)
    std::vector<double> frequencies;   ///< [Hz], 0 .. repetition_rate / 2
    std::vector<double> frame_times;   ///< frame centres [s]
    std::size_t window_length = 0;
    std::size_t hop = 0;
    WindowKind window_kind = WindowKind::hann;
    double window_energy = 0.0;        ///< sum of squared window coefficients

    double db(std::size_t frame, std::size_t bin) const noexcept { return magnitudes_db[frame * n_freq + bin]; }
};

inline constexpr double spectrogram_floor_db = -120.0;

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// Magnitude-squared STFT in dB. window_length must be even and >= 16.
Spectrogram spectrogram(std::span<const double> series, double repetition_rate, std::size_t window_length = 256,
                        std::size_t hop = 64, WindowKind window_kind = WindowKind::hann, double t0 = 0.0);

/// Mean-square power of the series inside [f_low, f_high] (periodogram
/// integration, mean removed).
double band_power(std::span<const double> series, double repetition_rate, double f_low, double f_high);

struct Band {
    double low = 50.0;
    double high = 1000.0;
};

/// Adds band-limited Gaussian noise to one series so its in-band power rises by delta_db.
void add_awgn_series(std::span<double> series, double repetition_rate, double delta_db, Band band, std::uint64_t seed,
                     std::uint64_t column);

/// Validates the add_awgn arguments; throws ArgumentError.
void check_awgn_args(double repetition_rate, double delta_db, Band band);

PhaseMatrix add_awgn(const PhaseMatrix& phase, double delta_db, Band band, std::uint64_t seed);

// PHIPHS01 file format ------------------------------------------------------

inline constexpr char phase_magic[9] = "PHIPHS01";
inline constexpr std::uint32_t phase_version = 1;

/// Streaming PHIPHS01 writer. Masked cells are stored as NaN.
class PhaseFileWriter {
public:
    PhaseFileWriter(const std::filesystem::path& path, const PhaseMatrix& shape);
    void write_rows(std::span<const float> values, std::span<const std::uint8_t> mask);
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t expected_;
    std::size_t written_ = 0;
};

class PhaseFileReader {
public:
    explicit PhaseFileReader(const std::filesystem::path& path);
    /// Geometry and timing of the file (values empty).
    const PhaseMatrix& shape() const noexcept { return shape_; }
    std::size_t read_rows(std::size_t count, std::span<float> values, std::span<std::uint8_t> mask);
    /// Reads columns [c0, c0 + nc) of every row into column-major `values` (nc * n_pulses).
    void read_columns(std::size_t c0, std::size_t nc, std::span<float> values, std::span<std::uint8_t> mask);
    void rewind();

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::streamoff payload_offset_ = 0;
    PhaseMatrix shape_;
    std::size_t next_row_ = 0;
    std::vector<float> held_;
};

void write_phase(const std::filesystem::path& path, const PhaseMatrix& phase);
PhaseMatrix read_phase(const std::filesystem::path& path);

/// Column-block AWGN injection from one PHIPHS01 file into another, bounded by
/// `memory_budget` bytes of column data.
void add_awgn_file(const std::filesystem::path& in, const std::filesystem::path& out, double delta_db, Band band,
                   std::uint64_t seed, std::size_t memory_budget = std::size_t{512} << 20);

/// CSV: first row `time_s,<positions>`, first column window centres, cells in
/// radians (`nan` for invalid windows).
void write_activity_csv(std::ostream& out, const ActivityMap& map);
void write_activity_csv(const std::filesystem::path& path, const ActivityMap& map);

/// CSV: first row `time_s,<frequencies>`, first column frame centres, cells in dB.
void write_spectrogram_csv(std::ostream& out, const Spectrogram& s);
void write_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& s);

}  // namespace phiotdr::dsp
