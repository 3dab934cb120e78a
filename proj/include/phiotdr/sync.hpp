// SPDX-License-Identifier: Apache-2.0
//
// Oscilloscope breakdown extraction and chronological matching against
// phi-OTDR detections.
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "phiotdr/spark_gen.hpp"

namespace phiotdr::sync {

struct ScopeEventPolicy {
    /// Negative-going slope threshold on the recorded (probe-side) voltage [V/s].
    double slope_threshold = -1e6;
    double refractory = 20e-3;

    void validate() const;
};

/// Times where the finite-difference slope first drops below the threshold.
/// The time reported is the start of the sample interval that crossed.
std::vector<double> extract_scope_events(const spark::VoltageTrace& trace, const ScopeEventPolicy& policy = {});

struct SyncPair {
    double scope_time = 0.0;
    double otdr_time = 0.0;
    double offset = 0.0; ///< otdr - scope
};

struct SyncReport {
    std::vector<SyncPair> pairs;
    std::size_t unmatched_scope = 0;
    std::size_t unmatched_otdr = 0;
    double mean_abs_offset = 0.0;
    double max_abs_offset = 0.0;
    double tolerance = 0.0;
};

/// Greedy chronological matching: each scope event, in order, takes the
/// closest unused OTDR event within +-tolerance. Both lists must be sorted.
SyncReport match_events(std::span<const double> otdr_times, std::span<const double> scope_times, double tolerance);

void write_sync_json(const std::filesystem::path& path, const SyncReport& report);

}  // namespace phiotdr::sync
