// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration with a strict schema: every key is optional and
// defaults to the library default, unknown keys are rejected with their path.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "phiotdr/detect.hpp"
#include "phiotdr/dsp.hpp"
#include "phiotdr/interrogator.hpp"
#include "phiotdr/sync.hpp"

namespace phiotdr::config {

struct ProcessingParams {
    double gauge_length = 10.0;
    double fade_fraction = 0.3;
    double activity_window = 10e-3;
    double activity_hop = 2e-3;
    std::size_t spectrogram_window = 256;
    std::size_t spectrogram_hop = 64;
    double audio_highpass = 10.0;
    dsp::Band awgn_band{50.0, 1000.0};

    void validate() const;
};

struct Config {
    interrogator::SessionConfig session;
    ProcessingParams processing;
    detect::DetectionPolicy detection;
    sync::ScopeEventPolicy scope_events;

    void validate() const;
};

inline constexpr std::string_view tool_version = "1.0.0";

/// Parses and validates; throws ConstructionError naming the offending key path.
Config parse(std::string_view json_text);
Config load(const std::filesystem::path& path);

/// Canonical JSON (every field, fixed key order).
std::string dump(const Config& cfg);

/// FNV-1a 64 of the canonical dump, as 16 hex digits.
std::string hash(const Config& cfg);

/// {"tool", "version", "seed", "config_hash", "config"}
std::string manifest(const Config& cfg);

/// Reads the embedded config back out of a manifest.
Config from_manifest(std::string_view manifest_text);

}  // namespace phiotdr::config
