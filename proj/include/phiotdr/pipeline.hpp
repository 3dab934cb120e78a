// SPDX-License-Identifier: Apache-2.0
//
// Row-block streaming from a trace source through the differential phaser and
// the activity accumulator. Memory stays bounded by the block size, the
// activity map and whatever columns the caller asks to keep.
#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "phiotdr/dsp.hpp"
#include "phiotdr/interrogator.hpp"

namespace phiotdr::pipeline {

struct Options {
    double gauge_length = 10.0;
    dsp::PhaseOptions phase;
    double activity_window = 10e-3;
    double activity_hop = 2e-3;
    std::size_t block_rows = 256;
    /// Phase columns whose full series are returned.
    std::vector<std::size_t> keep_columns;
    /// Write the PhaseMatrix here (PHIPHS01) when set.
    std::optional<std::filesystem::path> phase_out;
    bool parallel = true;
};

struct Result {
    dsp::PhaseMatrix shape; ///< geometry only
    dsp::ActivityMap activity;
    std::vector<std::vector<double>> kept;
    std::vector<std::vector<std::uint8_t>> kept_mask;
};

/// Produces `count` rows starting at the next unread pulse; returns rows written.
using RowSource = std::function<std::size_t(std::size_t count, std::span<std::complex<float>> out)>;

Result run(const interrogator::TraceMeta& meta, std::size_t n_pulses, std::size_t n_bins, const RowSource& source,
           const Options& options);

Result run(const interrogator::SessionSynthesizer& synth, const Options& options);

Result run(interrogator::TraceFileReader& reader, const Options& options);

}  // namespace phiotdr::pipeline
