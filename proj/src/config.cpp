// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"
#include "phiotdr/error.hpp"

namespace phiotdr::config {

namespace {

using json = nlohmann::ordered_json;

// One field list per struct, walked by a reader and by a writer.

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            fail(path_, "expected an object");
    }
    ~Reader() = default;

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!known_.count(k))
                fail(path_ + "/" + k, "unknown key");
    }

    void number(const char* key, double& x)
    {
        if (const json* v = take(key)) {
            if (v->is_number())
                x = v->get<double>();
            else if (v->is_string() && (v->get<std::string>() == "inf" || v->get<std::string>() == "-inf"))
                x = v->get<std::string>() == "inf" ? INFINITY : -INFINITY;
            else
                fail(path_ + "/" + key, "expected a number");
        }
    }

    template <typename I>
    void integer(const char* key, I& x)
    {
        if (const json* v = take(key)) {
            if (!v->is_number_integer())
                fail(path_ + "/" + key, "expected an integer");
            if constexpr (std::is_unsigned_v<I>) {
                if (v->is_number_unsigned())
                    x = v->get<I>();
                else if (v->get<std::int64_t>() >= 0)
                    x = static_cast<I>(v->get<std::int64_t>());
                else
                    fail(path_ + "/" + key, "expected a non-negative integer");
            } else {
                x = v->get<I>();
            }
        }
    }

    void string(const char* key, std::string& x)
    {
        if (const json* v = take(key)) {
            if (!v->is_string())
                fail(path_ + "/" + key, "expected a string");
            x = v->get<std::string>();
        }
    }

    template <typename F>
    void object(const char* key, F&& f)
    {
        if (const json* v = take(key)) {
            Reader sub(*v, path_ + "/" + key);
            f(sub);
            sub.finish();
        }
    }

    template <typename T, typename F>
    void array(const char* key, std::vector<T>& xs, F&& f)
    {
        if (const json* v = take(key)) {
            if (!v->is_array())
                fail(path_ + "/" + key, "expected an array");
            xs.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                Reader sub((*v)[i], path_ + "/" + key + "/" + std::to_string(i));
                T x{};
                f(sub, x);
                sub.finish();
                xs.push_back(std::move(x));
            }
        }
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& what)
    {
        throw ConstructionError("config " + (path.empty() ? std::string("/") : path) + ": " + what);
    }

    const std::string& path() const { return path_; }

private:
    const json* take(const char* key)
    {
        known_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

class Writer {
public:
    explicit Writer(json& j) : j_(j) { j_ = json::object(); }

    void number(const char* key, double& x)
    {
        if (std::isinf(x))
            j_[key] = x > 0 ? "inf" : "-inf";
        else
            j_[key] = x;
    }
    template <typename I>
    void integer(const char* key, I& x)
    {
        j_[key] = x;
    }
    void string(const char* key, std::string& x) { j_[key] = x; }
    template <typename F>
    void object(const char* key, F&& f)
    {
        json sub;
        Writer w(sub);
        f(w);
        j_[key] = std::move(sub);
    }
    template <typename T, typename F>
    void array(const char* key, std::vector<T>& xs, F&& f)
    {
        json arr = json::array();
        for (auto& x : xs) {
            json sub;
            Writer w(sub);
            f(w, x);
            arr.push_back(std::move(sub));
        }
        j_[key] = std::move(arr);
    }

private:
    json& j_;
};

template <typename V>
void fields(V& v, Config& c)
{
    auto& s = c.session;
    v.integer("seed", s.seed);
    v.object("circuit", [&](auto& o) {
        auto& x = s.circuit;
        o.number("supply_peak_voltage", x.supply_peak_voltage);
        o.number("supply_frequency", x.supply_frequency);
        o.number("charging_resistance", x.charging_resistance);
        o.number("discharge_capacitance", x.discharge_capacitance);
        o.number("breakdown_voltage_mean", x.breakdown_voltage_mean);
        o.number("breakdown_voltage_jitter", x.breakdown_voltage_jitter);
        o.number("residual_voltage", x.residual_voltage);
        o.number("collapse_time_constant", x.collapse_time_constant);
    });
    v.object("acoustics", [&](auto& o) {
        auto& x = s.acoustics;
        o.number("burst_duration", x.burst_duration);
        o.number("broadband_decay", x.broadband_decay);
        o.number("ring_frequency", x.ring_frequency);
        o.number("ring_decay", x.ring_decay);
        o.number("ring_to_broadband_ratio", x.ring_to_broadband_ratio);
    });
    v.object("scope", [&](auto& o) {
        auto& x = s.scope;
        o.number("divider_ratio", x.divider_ratio);
        o.number("sample_rate", x.sample_rate);
        o.integer("adc_bits", x.adc_bits);
        o.number("noise_rms", x.noise_rms);
        o.number("full_scale_min", x.full_scale_min);
        o.number("full_scale_max", x.full_scale_max);
    });
    v.object("layout", [&](auto& o) {
        auto& x = s.layout;
        o.array("segments", x.segments, [](auto& so, fiber::Segment& seg) {
            so.string("name", seg.name);
            so.number("length", seg.length);
            so.number("group_index", seg.group_index);
        });
        o.number("discharge_position", x.discharge_position);
        o.number("sensor_extent", x.sensor_extent);
    });
    v.object("coupling", [&](auto& o) {
        std::string name(fiber::to_string(s.coupling));
        o.string("name", name);
        if constexpr (std::is_same_v<std::decay_t<decltype(o)>, Reader>) {
            try {
                s.coupling = fiber::parse_coupling_name(name);
            } catch (const Error& e) {
                Reader::fail(o.path() + "/name", e.what());
            }
        }
        o.object("presets", [&](auto& p) {
            auto& x = s.coupling_presets;
            p.number("lab_coiled_13", x.lab_coiled_13);
            p.number("lab_straight", x.lab_straight);
            p.number("opgw_coiled_4", x.opgw_coiled_4);
            p.number("opgw_straight", x.opgw_straight);
        });
    });
    v.object("background", [&](auto& o) {
        auto& x = s.background;
        o.array("tones", x.tones, [](auto& to, fiber::Tone& t) {
            to.number("frequency", t.frequency);
            to.number("amplitude", t.amplitude);
        });
        o.number("broadband_floor", x.broadband_floor);
        o.number("reference_length", x.reference_length);
    });
    v.object("laser", [&](auto& o) {
        o.number("wavelength", s.laser.wavelength);
        o.number("linewidth", s.laser.linewidth);
    });
    v.object("pulse", [&](auto& o) {
        o.number("repetition_rate", s.pulse.repetition_rate);
        o.number("width", s.pulse.width);
        o.number("peak_power_dbm", s.pulse.peak_power_dbm);
    });
    v.object("acquisition", [&](auto& o) {
        auto& x = s.acquisition;
        o.number("adc_rate", x.adc_rate);
        o.number("group_index", x.group_index);
        o.number("receiver_snr_db", x.receiver_snr_db);
        o.number("baseline_duration", x.baseline_duration);
        o.number("event_duration", x.event_duration);
        o.number("post_duration", x.post_duration);
    });
    v.object("processing", [&](auto& o) {
        auto& x = c.processing;
        o.number("gauge_length", x.gauge_length);
        o.number("fade_fraction", x.fade_fraction);
        o.number("activity_window", x.activity_window);
        o.number("activity_hop", x.activity_hop);
        o.integer("spectrogram_window", x.spectrogram_window);
        o.integer("spectrogram_hop", x.spectrogram_hop);
        o.number("audio_highpass", x.audio_highpass);
        o.number("awgn_band_low", x.awgn_band.low);
        o.number("awgn_band_high", x.awgn_band.high);
    });
    v.object("detection", [&](auto& o) {
        auto& x = c.detection;
        o.number("baseline_start", x.baseline_start);
        o.number("baseline_end", x.baseline_end);
        o.number("k_sigma", x.k_sigma);
        o.number("merge_gap", x.merge_gap);
        o.number("refractory", x.refractory);
        o.number("same_position_m", x.same_position_m);
        o.integer("min_cluster_cells", x.min_cluster_cells);
    });
    v.object("scope_events", [&](auto& o) {
        o.number("slope_threshold", c.scope_events.slope_threshold);
        o.number("refractory", c.scope_events.refractory);
    });
}

json to_json(const Config& cfg)
{
    Config copy = cfg;
    json j;
    Writer w(j);
    fields(w, copy);
    return j;
}

Config from_json(const json& j)
{
    Config cfg;
    Reader r(j, "");
    fields(r, cfg);
    r.finish();
    cfg.validate();
    return cfg;
}

}  // namespace

void ProcessingParams::validate() const
{
    if (!(std::isfinite(gauge_length) && gauge_length > 0.0))
        throw ConstructionError("processing: gauge_length must be > 0");
    if (!(fade_fraction >= 0.0 && fade_fraction < 1.0))
        throw ConstructionError("processing: fade_fraction must lie in [0, 1)");
    if (!(std::isfinite(activity_window) && activity_window > 0.0))
        throw ConstructionError("processing: activity_window must be > 0");
    if (!(std::isfinite(activity_hop) && activity_hop > 0.0))
        throw ConstructionError("processing: activity_hop must be > 0");
    if (spectrogram_window < 16 || spectrogram_window % 2 != 0)
        throw ConstructionError("processing: spectrogram_window must be even and >= 16");
    if (spectrogram_hop < 1)
        throw ConstructionError("processing: spectrogram_hop must be >= 1");
    if (!(std::isfinite(audio_highpass) && audio_highpass > 0.0))
        throw ConstructionError("processing: audio_highpass must be > 0");
    if (!(awgn_band.low >= 0.0 && awgn_band.low < awgn_band.high && std::isfinite(awgn_band.high)))
        throw ConstructionError("processing: awgn band must satisfy 0 <= low < high");
}

void Config::validate() const
{
    session.validate();
    processing.validate();
    detection.validate();
    scope_events.validate();
}

Config parse(std::string_view json_text)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConstructionError(std::string("config: invalid JSON: ") + e.what());
    }
    return from_json(j);
}

Config load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string dump(const Config& cfg) { return to_json(cfg).dump(2); }

std::string hash(const Config& cfg)
{
    const std::string text = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string manifest(const Config& cfg)
{
    json j;
    j["tool"] = "phiotdr";
    j["version"] = tool_version;
    j["seed"] = cfg.session.seed;
    j["config_hash"] = hash(cfg);
    j["config"] = to_json(cfg);
    return j.dump(2) + "\n";
}

Config from_manifest(std::string_view manifest_text)
{
    json j;
    try {
        j = json::parse(manifest_text);
    } catch (const json::parse_error& e) {
        throw ConstructionError(std::string("manifest: invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("config"))
        throw ConstructionError("manifest: missing config");
    return from_json(j["config"]);
}

}  // namespace phiotdr::config
