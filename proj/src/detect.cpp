// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>

#include "json.hpp"

#include "phiotdr/binary_io.hpp"
#include "phiotdr/error.hpp"

namespace phiotdr::detect {

namespace {

using dsp::ActivityMap;

struct Cluster {
    double w_sum = 0.0;
    double wt_sum = 0.0;
    double wx_sum = 0.0;
    double peak = 0.0;
    double peak_threshold = 0.0;
    double t_first = 0.0;
    double t_last = 0.0;
    std::size_t cells = 0;

    double time() const { return wt_sum / w_sum; }
    double position() const { return wx_sum / w_sum; }

    void absorb(const Cluster& o)
    {
        w_sum += o.w_sum;
        wt_sum += o.wt_sum;
        wx_sum += o.wx_sum;
        if (o.peak > peak) {
            peak = o.peak;
            peak_threshold = o.peak_threshold;
        }
        t_first = std::min(t_first, o.t_first);
        t_last = std::max(t_last, o.t_last);
        cells += o.cells;
    }
};

double window_start(const ActivityMap& m, std::size_t w)
{
    return m.t0 + static_cast<double>(w * m.hop_pulses) / m.repetition_rate;
}

}  // namespace

void DetectionPolicy::validate() const
{
    if (!(std::isfinite(baseline_start) && std::isfinite(baseline_end) && baseline_start < baseline_end))
        throw ConstructionError("detection: baseline interval must be finite with start < end");
    if (!(std::isfinite(k_sigma) && k_sigma > 0.0))
        throw ConstructionError("detection: k_sigma must be > 0");
    if (!(std::isfinite(merge_gap) && merge_gap >= 0.0))
        throw ConstructionError("detection: merge_gap must be >= 0");
    if (!(std::isfinite(refractory) && refractory >= merge_gap))
        throw ConstructionError("detection: refractory must be >= merge_gap");
    if (!(std::isfinite(same_position_m) && same_position_m >= 0.0))
        throw ConstructionError("detection: same_position_m must be >= 0");
    if (min_cluster_cells < 1)
        throw ConstructionError("detection: min_cluster_cells must be >= 1");
}

std::vector<double> column_thresholds(const ActivityMap& activity, const DetectionPolicy& policy)
{
    policy.validate();
    if (activity.n_windows == 0)
        throw ArgumentError("detect: activity map is empty");
    const double span_start = window_start(activity, 0);
    const double span_end = window_start(activity, activity.n_windows - 1) + activity.window_duration;
    if (policy.baseline_start < span_start - 1e-9 || policy.baseline_end > span_end + 1e-9)
        throw ArgumentError("detect: baseline interval lies outside the activity map's time span");

    std::vector<std::size_t> base;
    for (std::size_t w = 0; w < activity.n_windows; ++w) {
        const double s = window_start(activity, w);
        if (s >= policy.baseline_start - 1e-9 && s + activity.window_duration <= policy.baseline_end + 1e-9)
            base.push_back(w);
    }
    if (base.empty())
        throw ArgumentError("detect: no activity window fits inside the baseline interval");

    const std::size_t nc = activity.n_cols;
    std::vector<double> thr(nc, std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(nc); ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        std::size_t n = 0;
        double sum = 0.0;
        for (std::size_t w : base)
            if (activity.is_valid(w, c)) {
                sum += activity.at(w, c);
                ++n;
            }
        if (n < 2)
            continue;
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t w : base)
            if (activity.is_valid(w, c)) {
                const double d = activity.at(w, c) - mean;
                ss += d * d;
            }
        thr[c] = mean + policy.k_sigma * std::sqrt(ss / static_cast<double>(n));
    }
    return thr;
}

std::vector<DetectedEvent> detect_events(const ActivityMap& activity, const DetectionPolicy& policy)
{
    const auto thr = column_thresholds(activity, policy);
    const std::size_t nw = activity.n_windows;
    const std::size_t nc = activity.n_cols;
    auto hot = [&](std::size_t w, std::size_t c) {
        return activity.is_valid(w, c) && static_cast<double>(activity.at(w, c)) > thr[c];
    };

    // Flood fill over hot cells, window-major so clusters come out in time order.
    std::vector<bool> seen(nw * nc, false);
    std::vector<Cluster> clusters;
    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (std::size_t w0 = 0; w0 < nw; ++w0) {
        for (std::size_t c0 = 0; c0 < nc; ++c0) {
            if (seen[w0 * nc + c0] || !hot(w0, c0))
                continue;
            Cluster cl;
            cl.t_first = std::numeric_limits<double>::infinity();
            cl.t_last = -std::numeric_limits<double>::infinity();
            stack.assign(1, {w0, c0});
            seen[w0 * nc + c0] = true;
            while (!stack.empty()) {
                const auto [w, c] = stack.back();
                stack.pop_back();
                const double v = activity.at(w, c);
                const double t = activity.window_center(w);
                cl.w_sum += v;
                ++cl.cells;
                cl.wt_sum += v * t;
                cl.wx_sum += v * activity.column_position(c);
                if (v > cl.peak) {
                    cl.peak = v;
                    cl.peak_threshold = thr[c];
                }
                cl.t_first = std::min(cl.t_first, t);
                cl.t_last = std::max(cl.t_last, t);
                for (int dw = -1; dw <= 1; ++dw)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dw == 0 && dc == 0)
                            continue;
                        const auto ww = static_cast<std::ptrdiff_t>(w) + dw;
                        const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
                        if (ww < 0 || cc < 0 || ww >= static_cast<std::ptrdiff_t>(nw) ||
                            cc >= static_cast<std::ptrdiff_t>(nc))
                            continue;
                        const auto i = static_cast<std::size_t>(ww) * nc + static_cast<std::size_t>(cc);
                        if (!seen[i] && hot(static_cast<std::size_t>(ww), static_cast<std::size_t>(cc))) {
                            seen[i] = true;
                            stack.emplace_back(static_cast<std::size_t>(ww), static_cast<std::size_t>(cc));
                        }
                    }
            }
            if (cl.w_sum > 0.0)
                clusters.push_back(cl);
        }
    }

    // Merge clusters at the same position separated by less than merge_gap.
    std::sort(clusters.begin(), clusters.end(),
              [](const Cluster& a, const Cluster& b) { return a.t_first < b.t_first; });
    std::vector<Cluster> merged;
    for (const auto& cl : clusters) {
        bool absorbed = false;
        for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
            if (cl.t_first - it->t_last > policy.merge_gap)
                continue;
            if (std::abs(cl.position() - it->position()) <= policy.same_position_m) {
                it->absorb(cl);
                absorbed = true;
                break;
            }
        }
        if (!absorbed)
            merged.push_back(cl);
    }
    std::erase_if(merged, [&](const Cluster& cl) { return cl.cells < policy.min_cluster_cells; });

    // Refractory suppression, strongest first.
    std::vector<std::size_t> order(merged.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return merged[a].peak > merged[b].peak; });
    std::vector<const Cluster*> kept;
    for (std::size_t i : order) {
        const Cluster& cl = merged[i];
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Cluster* k) {
            return std::abs(k->time() - cl.time()) < policy.refractory &&
                   std::abs(k->position() - cl.position()) <= policy.same_position_m;
        });
        if (!suppressed)
            kept.push_back(&cl);
    }
    std::sort(kept.begin(), kept.end(), [](const Cluster* a, const Cluster* b) { return a->time() < b->time(); });

    std::vector<DetectedEvent> out;
    for (const Cluster* cl : kept) {
        if (!out.empty() && !(cl->time() > out.back().time))
            continue;
        DetectedEvent e;
        e.time = cl->time();
        e.position = cl->position();
        e.peak_activity = cl->peak;
        const double ref = std::max(cl->peak_threshold, std::numeric_limits<double>::min());
        e.snr = std::max(0.0, 20.0 * std::log10(cl->peak / ref));
        out.push_back(e);
    }
    return out;
}

std::optional<Localization> localize(std::span<const DetectedEvent> events, const ActivityMap& activity)
{
    if (events.empty() || activity.n_windows == 0 || activity.n_cols == 0)
        return std::nullopt;
    double w_sum = 0.0;
    double wx_sum = 0.0;
    for (const auto& e : events) {
        w_sum += e.peak_activity;
        wx_sum += e.peak_activity * e.position;
    }
    if (!(w_sum > 0.0))
        return std::nullopt;
    Localization loc;
    loc.position = wx_sum / w_sum;

    // Excess activity over each column's median, integrated over windows that
    // overlap a detected event.
    const std::size_t nw = activity.n_windows;
    const std::size_t nc = activity.n_cols;
    std::vector<bool> near(nw, false);
    {
        std::size_t ei = 0;
        const double reach = activity.window_duration;
        for (std::size_t w = 0; w < nw; ++w) {
            const double t = activity.window_center(w);
            while (ei < events.size() && events[ei].time < t - reach)
                ++ei;
            near[w] = ei < events.size() && std::abs(events[ei].time - t) <= reach;
        }
    }
    std::vector<double> profile(nc, 0.0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(nc); ++ci) {
        const auto c = static_cast<std::size_t>(ci);
        std::vector<float> v;
        v.reserve(nw);
        for (std::size_t w = 0; w < nw; ++w)
            if (activity.is_valid(w, c))
                v.push_back(activity.at(w, c));
        if (v.empty())
            continue;
        auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
        std::nth_element(v.begin(), mid, v.end());
        const double median = *mid;
        double s = 0.0;
        for (std::size_t w = 0; w < nw; ++w)
            if (near[w] && activity.is_valid(w, c))
                s += activity.at(w, c) - median;
        profile[c] = s;
    }
    const std::size_t peak = activity.nearest_column(loc.position);
    std::size_t arg = peak;
    // Search the neighbourhood of the reported position for the profile maximum.
    const auto reach = static_cast<std::size_t>(std::ceil(2.0 * 10.0 / activity.bin_spacing));
    for (std::size_t c = peak > reach ? peak - reach : 0; c < std::min(nc, peak + reach + 1); ++c)
        if (profile[c] > profile[arg])
            arg = c;
    const double half = 0.5 * profile[arg];
    if (!(half > 0.0)) {
        loc.half_width = 0.5 * activity.bin_spacing;
        return loc;
    }
    std::size_t lo = arg;
    std::size_t hi = arg;
    while (lo > 0 && profile[lo - 1] >= half)
        --lo;
    while (hi + 1 < nc && profile[hi + 1] >= half)
        ++hi;
    loc.half_width = 0.5 * static_cast<double>(hi - lo + 1) * activity.bin_spacing;
    return loc;
}

AudioClip reconstruct_audio(std::span<const double> series, std::span<const std::uint8_t> masked,
                            double repetition_rate, double highpass_cutoff, double target_peak)
{
    if (!(repetition_rate > 0.0))
        throw ArgumentError("audio: repetition_rate must be > 0");
    if (!(highpass_cutoff > 0.0 && repetition_rate >= 2.0 * highpass_cutoff))
        throw ArgumentError("audio: repetition_rate must be >= 2 * highpass_cutoff");
    if (!(target_peak > 0.0 && target_peak <= 1.0))
        throw ArgumentError("audio: target_peak must lie in (0, 1]");
    if (!masked.empty() && masked.size() != series.size())
        throw ArgumentError("audio: mask length differs from series length");
    if (!series.empty() && !masked.empty() &&
        std::all_of(masked.begin(), masked.end(), [](std::uint8_t m) { return m != 0; }))
        throw DataError("audio: every sample at this position is masked by fading (amplitude below threshold)");

    AudioClip clip;
    clip.sample_rate = repetition_rate;
    clip.samples.resize(series.size());
    const double rc = 1.0 / (2.0 * std::numbers::pi * highpass_cutoff);
    const double a = rc / (rc + 1.0 / repetition_rate);
    double y = 0.0;
    for (std::size_t i = 1; i < series.size(); ++i) {
        y = a * (y + series[i] - series[i - 1]);
        clip.samples[i] = y;
    }
    double peak = 0.0;
    for (double v : clip.samples)
        peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : clip.samples)
            v *= target_peak / peak;
    return clip;
}

AudioClip reconstruct_audio(const dsp::PhaseMatrix& phase, double position, double highpass_cutoff,
                            double target_peak)
{
    const double lo = static_cast<double>(phase.meta.first_bin) * phase.meta.bin_spacing;
    const double hi = lo + static_cast<double>(phase.n_cols + phase.gauge_bins) * phase.meta.bin_spacing;
    if (!(position >= lo && position <= hi))
        throw ArgumentError("audio: position " + std::to_string(position) + " m lies outside the fiber");
    const std::size_t c = phase.nearest_column(position);
    std::vector<std::uint8_t> m(phase.n_pulses);
    for (std::size_t p = 0; p < phase.n_pulses; ++p)
        m[p] = phase.mask[p * phase.n_cols + c];
    return reconstruct_audio(phase.column(c), m, phase.meta.repetition_rate, highpass_cutoff, target_peak);
}

void write_wav(std::ostream& out, const AudioClip& clip)
{
    const auto rate = static_cast<std::uint32_t>(std::llround(clip.sample_rate));
    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    out.write("RIFF", 4);
    binio::put<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVEfmt ", 8);
    binio::put<std::uint32_t>(out, 16);
    binio::put<std::uint16_t>(out, 1);
    binio::put<std::uint16_t>(out, 1);
    binio::put<std::uint32_t>(out, rate);
    binio::put<std::uint32_t>(out, rate * 2);
    binio::put<std::uint16_t>(out, 2);
    binio::put<std::uint16_t>(out, 16);
    out.write("data", 4);
    binio::put<std::uint32_t>(out, data_bytes);
    for (double v : clip.samples) {
        const double c = std::clamp(v, -1.0, 1.0);
        binio::put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
    }
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    write_wav(out, clip);
    if (!out)
        throw IoError("write failed: " + path.string());
}

void write_events_jsonl(std::ostream& out, std::span<const DetectedEvent> events)
{
    for (const auto& e : events) {
        nlohmann::ordered_json j;
        j["time_s"] = e.time;
        j["position_m"] = e.position;
        j["peak_rad"] = e.peak_activity;
        j["snr_db"] = e.snr;
        out << j.dump() << '\n';
    }
}

void write_events_jsonl(const std::filesystem::path& path, std::span<const DetectedEvent> events)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    write_events_jsonl(out, events);
    if (!out)
        throw IoError("write failed: " + path.string());
}

std::vector<DetectedEvent> read_events_jsonl(std::istream& in)
{
    std::vector<DetectedEvent> events;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            DetectedEvent e;
            e.time = j.at("time_s").get<double>();
            e.position = j.value("position_m", 0.0);
            e.peak_activity = j.value("peak_rad", 0.0);
            e.snr = j.value("snr_db", 0.0);
            events.push_back(e);
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError("events line " + std::to_string(n) + ": " + ex.what());
        }
    }
    return events;
}

std::vector<DetectedEvent> read_events_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return read_events_jsonl(in);
}

void write_localization_json(const std::filesystem::path& path, const Localization& loc)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    nlohmann::ordered_json j;
    j["position_m"] = loc.position;
    j["half_width_m"] = loc.half_width;
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

}  // namespace phiotdr::detect
