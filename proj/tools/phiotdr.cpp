// SPDX-License-Identifier: Apache-2.0
//
// phiotdr: simulate, process, detect, spectrogram, audio and sync commands.
//
// Exit codes: 0 success, 1 no detection, 2 validation error, 3 I/O error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "phiotdr/config.hpp"
#include "phiotdr/detect.hpp"
#include "phiotdr/dsp.hpp"
#include "phiotdr/error.hpp"
#include "phiotdr/interrogator.hpp"
#include "phiotdr/pipeline.hpp"
#include "phiotdr/sync.hpp"

namespace fs = std::filesystem;
using namespace phiotdr;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_no_detection = 1;
constexpr int exit_invalid = 2;
constexpr int exit_io = 3;

constexpr std::size_t block_rows = 256;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

config::Config load_config(const Common& c)
{
    config::Config cfg = c.config_path.empty() ? config::Config{} : config::load(c.config_path);
    if (c.seed)
        cfg.session.seed = *c.seed;
    cfg.validate();
    return cfg;
}

fs::path prepare_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw IoError("cannot create output directory " + dir);
    return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out)
        throw IoError("write failed: " + path.string());
}

void write_truth_jsonl(const fs::path& path, const std::vector<spark::DischargeEvent>& events)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& e : events) {
        nlohmann::ordered_json j;
        j["time_s"] = e.time;
        j["position_m"] = e.fiber_position;
        j["breakdown_voltage_V"] = e.breakdown_voltage;
        j["energy_J"] = e.energy;
        out << j.dump() << '\n';
    }
    if (!out)
        throw IoError("write failed: " + path.string());
}

int cmd_simulate(const Common& common, const std::string& out_dir)
{
    const auto cfg = load_config(common);
    auto prepared = interrogator::prepare_session(cfg.session);
    const fs::path dir = prepare_dir(out_dir);
    const auto& synth = prepared.synthesizer;

    interrogator::TraceFileWriter writer(dir / "trace.phiotdr", synth.meta(), synth.n_pulses(), synth.n_bins());
    std::vector<std::complex<float>> rows(block_rows * synth.n_bins());
    for (std::size_t p = 0; p < synth.n_pulses(); p += block_rows) {
        const std::size_t n = std::min(block_rows, synth.n_pulses() - p);
        const std::span<std::complex<float>> block(rows.data(), n * synth.n_bins());
        synth.synthesize(p, n, block);
        writer.write_rows(block);
    }
    writer.close();
    write_truth_jsonl(dir / "events.jsonl", prepared.events);
    spark::write_voltage_csv(dir / "scope.csv", prepared.scope_trace);
    write_text(dir / "manifest.json", config::manifest(cfg));
    std::cout << "simulate: " << synth.n_pulses() << " pulses x " << synth.n_bins() << " bins, "
              << prepared.events.size() << " discharges -> " << dir.string() << '\n';
    return exit_ok;
}

dsp::ActivityMap activity_from_file(const fs::path& phase_path, const config::ProcessingParams& proc)
{
    dsp::PhaseFileReader reader(phase_path);
    const auto& shape = reader.shape();
    dsp::ActivityAccumulator acc(shape, proc.activity_window, proc.activity_hop);
    std::vector<float> values(block_rows * shape.n_cols);
    std::vector<std::uint8_t> mask(values.size());
    for (std::size_t p = 0; p < shape.n_pulses;) {
        const std::size_t got = reader.read_rows(block_rows, values, mask);
        acc.push(values, mask, got);
        p += got;
    }
    return acc.take();
}

std::pair<double, double> parse_band(const std::string& s)
{
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ArgumentError("--band must be LO:HI, got '" + s + "'");
    try {
        std::size_t used = 0;
        const double lo = std::stod(s.substr(0, colon), &used);
        if (used != colon)
            throw std::invalid_argument("lo");
        const std::string rest = s.substr(colon + 1);
        const double hi = std::stod(rest, &used);
        if (used != rest.size())
            throw std::invalid_argument("hi");
        return {lo, hi};
    } catch (const std::logic_error&) {
        throw ArgumentError("--band must be LO:HI with numeric bounds, got '" + s + "'");
    }
}

int cmd_process(const Common& common, const std::string& trace_path, double gauge_m, const std::string& out_dir,
                std::optional<double> awgn_db, const std::string& band_text)
{
    const auto cfg = load_config(common);
    interrogator::TraceFileReader reader(trace_path);
    std::optional<dsp::Band> band;
    if (awgn_db) {
        band = cfg.processing.awgn_band;
        if (!band_text.empty()) {
            const auto [lo, hi] = parse_band(band_text);
            band = dsp::Band{lo, hi};
        }
        dsp::check_awgn_args(reader.meta().repetition_rate, *awgn_db, *band);
    }
    const fs::path dir = prepare_dir(out_dir);

    pipeline::Options opt;
    opt.gauge_length = gauge_m;
    opt.phase.fade_fraction = cfg.processing.fade_fraction;
    opt.activity_window = cfg.processing.activity_window;
    opt.activity_hop = cfg.processing.activity_hop;
    opt.block_rows = block_rows;
    opt.phase_out = dir / "phase.phs";
    const auto res = pipeline::run(reader, opt);
    dsp::write_activity_csv(dir / "activity.csv", res.activity);
    std::cout << "process: gauge " << res.shape.gauge_bins << " bins (" << res.shape.effective_gauge() << " m), "
              << res.shape.n_cols << " columns, " << res.activity.n_windows << " activity windows\n";

    if (awgn_db) {
        const std::uint64_t seed = common.seed.value_or(reader.meta().seed);
        dsp::add_awgn_file(dir / "phase.phs", dir / "phase_awgn.phs", *awgn_db, *band, seed);
        dsp::write_activity_csv(dir / "activity_awgn.csv", activity_from_file(dir / "phase_awgn.phs", cfg.processing));
        std::cout << "process: +" << *awgn_db << " dB in [" << band->low << ", " << band->high << "] Hz\n";
    }
    return exit_ok;
}

int cmd_detect(const Common& common, const std::string& phase_path, const std::string& out_dir)
{
    const auto cfg = load_config(common);
    const auto activity = activity_from_file(phase_path, cfg.processing);
    const auto events = detect::detect_events(activity, cfg.detection);
    const fs::path dir = prepare_dir(out_dir);
    detect::write_events_jsonl(dir / "events.jsonl", events);
    const auto loc = detect::localize(events, activity);
    if (!loc) {
        std::error_code ec;
        fs::remove(dir / "localization.json", ec);
        std::cout << "detect: no events detected\n";
        return exit_no_detection;
    }
    detect::write_localization_json(dir / "localization.json", *loc);
    std::cout << "detect: " << events.size() << " events, discharge at " << loc->position << " m (half-width "
              << loc->half_width << " m)\n";
    return exit_ok;
}

struct Column {
    dsp::PhaseMatrix shape;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;
};

Column read_column(const std::string& phase_path, double position)
{
    dsp::PhaseFileReader reader(phase_path);
    Column col{reader.shape(), {}, {}};
    const double lo = 0.0;
    const double hi = static_cast<double>(col.shape.n_cols + col.shape.gauge_bins) * col.shape.meta.bin_spacing;
    if (!(position >= lo && position <= hi))
        throw ArgumentError("position " + std::to_string(position) + " m lies outside the fiber [0, " +
                            std::to_string(hi) + "] m");
    const std::size_t c = col.shape.nearest_column(position);
    std::vector<float> v(col.shape.n_pulses);
    col.mask.resize(col.shape.n_pulses);
    reader.read_columns(c, 1, v, col.mask);
    col.values.assign(v.begin(), v.end());
    return col;
}

int cmd_spectrogram(const Common& common, const std::string& phase_path, double position, const std::string& out)
{
    const auto cfg = load_config(common);
    const auto col = read_column(phase_path, position);
    const auto s = dsp::spectrogram(col.values, col.shape.meta.repetition_rate, cfg.processing.spectrogram_window,
                                    cfg.processing.spectrogram_hop, dsp::WindowKind::hann, col.shape.meta.t0);
    dsp::write_spectrogram_csv(fs::path(out), s);
    std::cout << "spectrogram: " << s.n_frames << " frames x " << s.n_freq << " bins (0 .. "
              << s.frequencies.back() << " Hz)\n";
    return exit_ok;
}

int cmd_audio(const Common& common, const std::string& phase_path, double position, const std::string& out)
{
    const auto cfg = load_config(common);
    const auto col = read_column(phase_path, position);
    const auto clip =
        detect::reconstruct_audio(col.values, col.mask, col.shape.meta.repetition_rate, cfg.processing.audio_highpass);
    detect::write_wav(fs::path(out), clip);
    std::cout << "audio: " << clip.samples.size() << " samples at " << clip.sample_rate << " Hz\n";
    return exit_ok;
}

int cmd_sync(const Common& common, const std::string& events_path, const std::string& scope_path, double tolerance,
             const std::string& out)
{
    const auto cfg = load_config(common);
    const auto events = detect::read_events_jsonl(fs::path(events_path));
    std::vector<double> otdr;
    otdr.reserve(events.size());
    for (const auto& e : events)
        otdr.push_back(e.time);
    const auto trace = spark::read_voltage_csv(fs::path(scope_path));
    const auto scope = sync::extract_scope_events(trace, cfg.scope_events);
    const auto report = sync::match_events(otdr, scope, tolerance);
    sync::write_sync_json(fs::path(out), report);
    std::cout << "sync: " << report.pairs.size() << " pairs, " << report.unmatched_scope << " unmatched scope, "
              << report.unmatched_otdr << " unmatched otdr, max |offset| " << report.max_abs_offset << " s\n";
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"phi-OTDR spark-gap discharge simulator and processing toolkit"};
    app.require_subcommand(1);

    Common common;
    std::uint64_t seed_value = 0;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed_value, "seed (overrides the config)");
    };

    std::string out_dir;
    std::string trace_path;
    std::string phase_path;
    std::string events_path;
    std::string scope_path;
    std::string out_file;
    std::string band_text;
    double gauge_m = 10.0;
    double position_m = 0.0;
    double tolerance_s = 10e-3;
    double awgn_db = 0.0;

    auto* sim = app.add_subcommand("simulate", "run the baseline / event / post protocol");
    add_common(sim);
    sim->add_option("--out", out_dir, "output directory")->required();

    auto* proc = app.add_subcommand("process", "differential phase and activity map");
    add_common(proc);
    proc->add_option("--trace", trace_path, "PHIOTDR1 trace file")->required();
    proc->add_option("--gauge-m", gauge_m, "gauge length [m]")->required();
    proc->add_option("--out", out_dir, "output directory")->required();
    auto* awgn_opt = proc->add_option("--awgn-db", awgn_db, "in-band noise increase [dB]");
    proc->add_option("--band", band_text, "AWGN band LO:HI [Hz]")->needs(awgn_opt);

    auto* det = app.add_subcommand("detect", "detect and localize discharges");
    add_common(det);
    det->add_option("--phase", phase_path, "PHIPHS01 phase file")->required();
    det->add_option("--out", out_dir, "output directory")->required();

    auto* spec = app.add_subcommand("spectrogram", "spectrogram CSV at one position");
    add_common(spec);
    spec->add_option("--phase", phase_path, "PHIPHS01 phase file")->required();
    spec->add_option("--position-m", position_m, "fiber position [m]")->required();
    spec->add_option("--out", out_file, "output CSV")->required();

    auto* aud = app.add_subcommand("audio", "WAV reconstruction at one position");
    add_common(aud);
    aud->add_option("--phase", phase_path, "PHIPHS01 phase file")->required();
    aud->add_option("--position-m", position_m, "fiber position [m]")->required();
    aud->add_option("--out", out_file, "output WAV")->required();

    auto* syn = app.add_subcommand("sync", "match OTDR detections with oscilloscope breakdowns");
    add_common(syn);
    syn->add_option("--events", events_path, "detected events JSONL")->required();
    syn->add_option("--scope", scope_path, "oscilloscope CSV")->required();
    syn->add_option("--tolerance-s", tolerance_s, "matching tolerance [s]");
    syn->add_option("--out", out_file, "output JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_invalid;
    }
    for (auto* sub : app.get_subcommands())
        if (sub->count("--seed") > 0)
            common.seed = seed_value;

    try {
        if (sim->parsed())
            return cmd_simulate(common, out_dir);
        if (proc->parsed())
            return cmd_process(common, trace_path, gauge_m, out_dir,
                               proc->count("--awgn-db") > 0 ? std::optional<double>(awgn_db) : std::nullopt,
                               band_text);
        if (det->parsed())
            return cmd_detect(common, phase_path, out_dir);
        if (spec->parsed())
            return cmd_spectrogram(common, phase_path, position_m, out_file);
        if (aud->parsed())
            return cmd_audio(common, phase_path, position_m, out_file);
        if (syn->parsed())
            return cmd_sync(common, events_path, scope_path, tolerance_s, out_file);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_invalid;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return exit_io;
    }
    return exit_invalid;
}
