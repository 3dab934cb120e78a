// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/fiber_channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "phiotdr/error.hpp"
#include "phiotdr/rng.hpp"

namespace phiotdr::fiber {

namespace {

constexpr std::size_t floor_block = 64;

std::uint64_t hash_bytes(std::uint64_t h, const void* data, std::size_t n) noexcept
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

double FiberLayout::total_length() const noexcept
{
    double sum = 0.0;
    for (const auto& s : segments)
        sum += s.length;
    return sum;
}

void FiberLayout::validate(std::optional<double> bin_spacing) const
{
    if (segments.empty())
        throw ConstructionError("layout: at least one segment required");
    for (const auto& s : segments) {
        if (!(std::isfinite(s.length) && s.length > 0.0))
            throw ConstructionError("layout: segment '" + s.name + "' must have length > 0");
        if (!(std::isfinite(s.group_index) && s.group_index >= 1.0))
            throw ConstructionError("layout: segment '" + s.name + "' group_index must be >= 1");
    }
    const double total = total_length();
    if (!(discharge_position > 0.0 && discharge_position < total))
        throw ConstructionError("layout: discharge_position must lie strictly inside the fiber");
    if (!(std::isfinite(sensor_extent) && sensor_extent > 0.0))
        throw ConstructionError("layout: sensor_extent must be > 0");
    if (bin_spacing && sensor_extent < *bin_spacing)
        throw ConstructionError("layout: sensor_extent must be >= bin spacing");
}

std::uint64_t FiberLayout::hash() const noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : segments) {
        h = hash_bytes(h, s.name.data(), s.name.size());
        h = hash_bytes(h, &s.length, sizeof s.length);
        h = hash_bytes(h, &s.group_index, sizeof s.group_index);
    }
    h = hash_bytes(h, &discharge_position, sizeof discharge_position);
    h = hash_bytes(h, &sensor_extent, sizeof sensor_extent);
    return h;
}

FiberLayout default_layout()
{
    return FiberLayout{{{"launch", 1000.0, 1.468}, {"sensor", 100.0, 1.468}, {"tail", 500.0, 1.468}}, 1080.0, 2.0};
}

std::string_view to_string(CouplingName n) noexcept
{
    switch (n) {
    case CouplingName::lab_straight: return "lab_straight";
    case CouplingName::lab_coiled_13: return "lab_coiled_13";
    case CouplingName::opgw_straight: return "opgw_straight";
    case CouplingName::opgw_coiled_4: return "opgw_coiled_4";
    }
    return "?";
}

CouplingName parse_coupling_name(std::string_view s)
{
    for (auto n : {CouplingName::lab_straight, CouplingName::lab_coiled_13, CouplingName::opgw_straight,
                   CouplingName::opgw_coiled_4})
        if (to_string(n) == s)
            return n;
    throw ConstructionError("unknown coupling profile '" + std::string(s) + "'");
}

void CouplingPresets::validate() const
{
    for (double v : {lab_coiled_13, lab_straight, opgw_coiled_4, opgw_straight})
        if (!(std::isfinite(v) && v > 0.0))
            throw ConstructionError("coupling: peak_phase_response must be > 0");
    if (!(lab_coiled_13 > lab_straight && lab_straight > opgw_coiled_4 && opgw_coiled_4 > opgw_straight))
        throw ConstructionError(
            "coupling: presets must satisfy lab_coiled_13 > lab_straight > opgw_coiled_4 > opgw_straight");
}

CouplingProfile CouplingPresets::profile(CouplingName name) const
{
    validate();
    switch (name) {
    case CouplingName::lab_straight: return {name, lab_straight};
    case CouplingName::lab_coiled_13: return {name, lab_coiled_13};
    case CouplingName::opgw_straight: return {name, opgw_straight};
    case CouplingName::opgw_coiled_4: return {name, opgw_coiled_4};
    }
    return {name, opgw_straight};
}

std::complex<double> ScattererField::phasor(std::size_t j) const noexcept
{
    return reflectivities[j] * std::polar(1.0, static_phases[j]);
}

std::size_t bin_count(double length, double spacing)
{
    // The tolerance keeps exact multiples (1600 / 0.4) from rounding up an extra bin.
    const double x = length / spacing;
    return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

ScattererField build_scatterer_field(const FiberLayout& layout, double bin_spacing, std::uint64_t seed)
{
    layout.validate();
    if (!(std::isfinite(bin_spacing) && bin_spacing > 0.0))
        throw ArgumentError("build_scatterer_field: bin_spacing must be > 0");
    const double total = layout.total_length();
    if (bin_spacing > total)
        throw ArgumentError("build_scatterer_field: bin_spacing exceeds fiber length");

    ScattererField f;
    f.bin_spacing = bin_spacing;
    f.seed = seed;
    const std::size_t n = bin_count(total, bin_spacing);
    f.reflectivities.resize(n);
    f.static_phases.resize(n);
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(n); ++j) {
        rng::Stream s(rng::key(seed, rng::Purpose::scatterer, static_cast<std::uint64_t>(j)));
        const double re = s.normal() * inv_sqrt2;
        const double im = s.normal() * inv_sqrt2;
        f.reflectivities[j] = {re, im};
        f.static_phases[j] = 2.0 * std::numbers::pi * s.uniform();
    }
    return f;
}

void BackgroundNoise::validate() const
{
    for (const auto& t : tones)
        if (!(std::isfinite(t.frequency) && t.frequency > 0.0 && std::isfinite(t.amplitude) && t.amplitude >= 0.0))
            throw ConstructionError("background: tones need frequency > 0 and amplitude >= 0");
    if (!(std::isfinite(broadband_floor) && broadband_floor >= 0.0))
        throw ConstructionError("background: broadband_floor must be >= 0");
    if (!(std::isfinite(reference_length) && reference_length > 0.0))
        throw ConstructionError("background: reference_length must be > 0");
}

void BackgroundNoise::check_nyquist(double nyquist) const
{
    for (const auto& t : tones)
        if (t.amplitude > 0.0 && !(t.frequency < nyquist))
            throw ArgumentError("background: tone at " + std::to_string(t.frequency) +
                                " Hz is not below the Nyquist frequency " + std::to_string(nyquist) + " Hz");
}

PhasePerturbation::PhasePerturbation(std::vector<spark::DischargeEvent> events,
                                     std::vector<spark::PressureSignal> signatures, CouplingProfile coupling,
                                     BackgroundNoise background, FiberLayout layout, double bin_spacing,
                                     std::uint64_t seed)
    : events_(std::move(events)),
      signatures_(std::move(signatures)),
      coupling_(coupling),
      background_(std::move(background)),
      layout_(std::move(layout)),
      bin_spacing_(bin_spacing),
      seed_(seed)
{
    if (signatures_.size() != events_.size())
        throw ArgumentError("perturbation_field: " + std::to_string(signatures_.size()) + " signatures for " +
                            std::to_string(events_.size()) + " events");
    if (!(std::isfinite(bin_spacing) && bin_spacing > 0.0))
        throw ArgumentError("perturbation_field: bin_spacing must be > 0");
    for (std::size_t i = 1; i < events_.size(); ++i)
        if (!(events_[i].time > events_[i - 1].time))
            throw ArgumentError("perturbation_field: events must be sorted by strictly increasing time");
    layout_.validate(bin_spacing);
    background_.validate();
    if (!(std::isfinite(coupling_.peak_phase_response) && coupling_.peak_phase_response >= 0.0))
        throw ArgumentError("perturbation_field: coupling must be finite and >= 0");

    n_bins_ = fiber::bin_count(layout_.total_length(), bin_spacing_);

    // Sensor bins: centres inside [d - e/2, d + e/2].
    const double lo = layout_.discharge_position - 0.5 * layout_.sensor_extent;
    const double hi = layout_.discharge_position + 0.5 * layout_.sensor_extent;
    auto first = static_cast<std::ptrdiff_t>(std::ceil(lo / bin_spacing_ - 0.5));
    auto last = static_cast<std::ptrdiff_t>(std::floor(hi / bin_spacing_ - 0.5));
    if (last < first)
        first = last = static_cast<std::ptrdiff_t>(std::floor(layout_.discharge_position / bin_spacing_));
    const auto max_bin = static_cast<std::ptrdiff_t>(n_bins_) - 1;
    sensor_first_ = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(first, 0, max_bin));
    sensor_last_ = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(last, 0, max_bin));

    for (const auto& s : signatures_)
        max_signature_duration_ = std::max(max_signature_duration_, s.duration());
    tone_scale_ = bin_spacing_ / background_.reference_length;
    floor_per_bin_ = background_.broadband_floor * std::sqrt(bin_spacing_ / background_.reference_length);
}

double PhasePerturbation::tone_per_bin(double t) const noexcept
{
    double sum = 0.0;
    for (const auto& tone : background_.tones)
        sum += tone.amplitude * std::sin(2.0 * std::numbers::pi * tone.frequency * t);
    return sum * tone_scale_;
}

double PhasePerturbation::discharge_phase(double t) const
{
    if (events_.empty() || coupling_.peak_phase_response == 0.0)
        return 0.0;
    // Events are sorted; walk back from the last event at or before t.
    auto it = std::upper_bound(events_.begin(), events_.end(), t,
                               [](double x, const spark::DischargeEvent& e) { return x < e.time; });
    double sum = 0.0;
    while (it != events_.begin()) {
        --it;
        const double tau = t - it->time;
        if (tau >= max_signature_duration_)
            break;
        sum += signatures_[static_cast<std::size_t>(it - events_.begin())].at(tau);
    }
    return coupling_.peak_phase_response * sum;
}

void PhasePerturbation::evaluate(double t, std::size_t first_bin, std::span<double> out) const
{
    const double tone = tone_per_bin(t);
    const std::uint64_t tk = rng::time_key(t);
    if (floor_per_bin_ > 0.0) {
        std::size_t block = static_cast<std::size_t>(-1);
        std::optional<rng::Stream> s;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const std::size_t bin = first_bin + i;
            if (bin / floor_block != block) {
                block = bin / floor_block;
                s.emplace(rng::key(seed_, rng::Purpose::floor, tk, block));
                for (std::size_t skip = block * floor_block; skip < bin; ++skip)
                    s->normal();
            }
            out[i] = tone + floor_per_bin_ * s->normal();
        }
    } else {
        std::fill(out.begin(), out.end(), tone);
    }

    const std::size_t end = first_bin + out.size();
    if (sensor_last_ < first_bin || sensor_first_ >= end)
        return;
    const double total = discharge_phase(t);
    if (total == 0.0)
        return;
    const double share = total / static_cast<double>(sensor_last_ - sensor_first_ + 1);
    for (std::size_t b = std::max(sensor_first_, first_bin); b <= std::min(sensor_last_, end - 1); ++b)
        out[b - first_bin] += share;
}

double PhasePerturbation::at(double t, std::size_t bin) const
{
    double v = 0.0;
    evaluate(t, bin, std::span<double>(&v, 1));
    return v;
}

double PhasePerturbation::background_at(double t, std::size_t bin) const
{
    double v = tone_per_bin(t);
    if (floor_per_bin_ > 0.0) {
        const std::size_t block = bin / floor_block;
        rng::Stream s(rng::key(seed_, rng::Purpose::floor, rng::time_key(t), block));
        for (std::size_t skip = block * floor_block; skip < bin; ++skip)
            s.normal();
        v += floor_per_bin_ * s.normal();
    }
    return v;
}

void PhasePerturbation::check_finite(double t) const
{
    if (!std::isfinite(discharge_phase(t)) || !std::isfinite(tone_per_bin(t)))
        throw DataError("perturbation is not finite at t = " + std::to_string(t) + " s");
}

PhasePerturbation perturbation_field(std::vector<spark::DischargeEvent> events,
                                     std::vector<spark::PressureSignal> signatures, const CouplingProfile& coupling,
                                     const BackgroundNoise& background, const FiberLayout& layout, double bin_spacing,
                                     std::uint64_t seed)
{
    return PhasePerturbation(std::move(events), std::move(signatures), coupling, background, layout, bin_spacing,
                             seed);
}

}  // namespace phiotdr::fiber
