// SPDX-License-Identifier: Apache-2.0
//
// Breakdown detection on activity maps, discharge localization and audio
// reconstruction from a single fiber position.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "phiotdr/dsp.hpp"

namespace phiotdr::detect {

struct DetectedEvent {
    double time = 0.0;          ///< activity-weighted centroid of the cluster [s]
    double position = 0.0;      ///< [m]
    double peak_activity = 0.0; ///< [rad]
    double snr = 0.0;           ///< 20 log10(peak / threshold) [dB]
};

struct DetectionPolicy {
    double baseline_start = 0.0;
    double baseline_end = 5.0;
    double k_sigma = 5.0;
    double merge_gap = 10e-3;
    double refractory = 20e-3;
    /// Clusters whose centroids lie closer than this are treated as one position.
    double same_position_m = 20.0;
    /// Merged clusters with fewer above-threshold cells are discarded as noise.
    std::size_t min_cluster_cells = 4;

    void validate() const;
};

/// Per-column threshold, 8-connected clustering, merge and refractory suppression.
/// Events come back sorted by time.
std::vector<DetectedEvent> detect_events(const dsp::ActivityMap& activity, const DetectionPolicy& policy = {});

/// Per-column thresholds used by detect_events (+inf for columns without a usable baseline).
std::vector<double> column_thresholds(const dsp::ActivityMap& activity, const DetectionPolicy& policy);

struct Localization {
    double position = 0.0;   ///< [m]
    double half_width = 0.0; ///< [m]
};

/// Empty optional when there is nothing to localize.
std::optional<Localization> localize(std::span<const DetectedEvent> events, const dsp::ActivityMap& activity);

struct AudioClip {
    double sample_rate = 0.0;
    std::vector<double> samples;
};

/// First-order high-pass then peak normalization of one phase series.
/// `masked` may be empty; throws DataError when every sample is masked.
AudioClip reconstruct_audio(std::span<const double> series, std::span<const std::uint8_t> masked,
                            double repetition_rate, double highpass_cutoff = 10.0, double target_peak = 0.9);

AudioClip reconstruct_audio(const dsp::PhaseMatrix& phase, double position, double highpass_cutoff = 10.0,
                            double target_peak = 0.9);

/// PCM signed 16-bit mono; sample rate rounded to the nearest hertz.
void write_wav(std::ostream& out, const AudioClip& clip);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// JSON Lines, one {"time_s", "position_m", "peak_rad", "snr_db"} object per event.
void write_events_jsonl(std::ostream& out, std::span<const DetectedEvent> events);
void write_events_jsonl(const std::filesystem::path& path, std::span<const DetectedEvent> events);
std::vector<DetectedEvent> read_events_jsonl(std::istream& in);
std::vector<DetectedEvent> read_events_jsonl(const std::filesystem::path& path);

void write_localization_json(const std::filesystem::path& path, const Localization& loc);

}  // namespace phiotdr::detect
