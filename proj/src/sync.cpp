// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/sync.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "phiotdr/error.hpp"

namespace phiotdr::sync {

void ScopeEventPolicy::validate() const
{
    if (!(std::isfinite(slope_threshold) && slope_threshold < 0.0))
        throw ConstructionError("scope events: slope_threshold must be < 0");
    if (!(std::isfinite(refractory) && refractory > 0.0))
        throw ConstructionError("scope events: refractory must be > 0");
}

std::vector<double> extract_scope_events(const spark::VoltageTrace& trace, const ScopeEventPolicy& policy)
{
    policy.validate();
    if (!(trace.sample_rate > 0.0))
        throw ArgumentError("scope events: sample_rate must be > 0");
    std::vector<double> times;
    bool below = false;
    for (std::size_t i = 1; i < trace.samples.size(); ++i) {
        const double slope = (trace.samples[i] - trace.samples[i - 1]) * trace.sample_rate;
        const bool now_below = slope < policy.slope_threshold;
        if (now_below && !below) {
            const double t = trace.time_at(i - 1);
            if (times.empty() || t - times.back() >= policy.refractory)
                times.push_back(t);
        }
        below = now_below;
    }
    return times;
}

SyncReport match_events(std::span<const double> otdr_times, std::span<const double> scope_times, double tolerance)
{
    if (!(std::isfinite(tolerance) && tolerance > 0.0))
        throw ArgumentError("match_events: tolerance must be > 0");
    if (!std::is_sorted(otdr_times.begin(), otdr_times.end()))
        throw ArgumentError("match_events: otdr times are not sorted ascending");
    if (!std::is_sorted(scope_times.begin(), scope_times.end()))
        throw ArgumentError("match_events: scope times are not sorted ascending");

    SyncReport r;
    r.tolerance = tolerance;
    std::vector<bool> used(otdr_times.size(), false);
    for (double s : scope_times) {
        auto it = std::lower_bound(otdr_times.begin(), otdr_times.end(), s - tolerance);
        std::size_t best = otdr_times.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (; it != otdr_times.end() && *it <= s + tolerance; ++it) {
            const auto j = static_cast<std::size_t>(it - otdr_times.begin());
            const double d = std::abs(*it - s);
            if (!used[j] && d < best_d) {
                best = j;
                best_d = d;
            }
        }
        if (best == otdr_times.size()) {
            ++r.unmatched_scope;
            continue;
        }
        used[best] = true;
        r.pairs.push_back({s, otdr_times[best], otdr_times[best] - s});
    }
    r.unmatched_otdr = otdr_times.size() - r.pairs.size();
    double sum = 0.0;
    for (const auto& p : r.pairs) {
        sum += std::abs(p.offset);
        r.max_abs_offset = std::max(r.max_abs_offset, std::abs(p.offset));
    }
    if (!r.pairs.empty())
        r.mean_abs_offset = sum / static_cast<double>(r.pairs.size());
    return r;
}

void write_sync_json(const std::filesystem::path& path, const SyncReport& report)
{
    nlohmann::ordered_json j;
    auto pairs = nlohmann::ordered_json::array();
    for (const auto& p : report.pairs)
        pairs.push_back({{"scope_time_s", p.scope_time}, {"otdr_time_s", p.otdr_time}, {"offset_s", p.offset}});
    j["pairs"] = std::move(pairs);
    j["unmatched_scope"] = report.unmatched_scope;
    j["unmatched_otdr"] = report.unmatched_otdr;
    j["mean_abs_offset_s"] = report.mean_abs_offset;
    j["max_abs_offset_s"] = report.max_abs_offset;
    j["tolerance_s"] = report.tolerance;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("write failed: " + path.string());
}

}  // namespace phiotdr::sync
