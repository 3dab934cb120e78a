// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/dsp.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "fft.hpp"
#include "phiotdr/binary_io.hpp"
#include "phiotdr/error.hpp"
#include "phiotdr/rng.hpp"

namespace phiotdr::dsp {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

/// Number of 2 pi turns to add after a step of size d (numpy unwrap rule).
std::int64_t turn_correction(double d) noexcept
{
    if (!(std::abs(d) >= std::numbers::pi))
        return 0;
    double dd = std::fmod(d + std::numbers::pi, two_pi);
    if (dd < 0.0)
        dd += two_pi;
    dd -= std::numbers::pi;
    if (dd == -std::numbers::pi && d > 0.0)
        dd = std::numbers::pi;
    return std::llround((dd - d) / two_pi);
}

template <typename Fn>
void parallel_for(std::size_t n, bool parallel, Fn&& fn)
{
    if (!parallel) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr failure;
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(phiotdr_dsp_failure)
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);
}

void append_double(std::string& s, double v)
{
    if (!std::isfinite(v)) {
        s += "nan";
        return;
    }
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    s.append(buf, r.ptr);
}

void append_float(std::string& s, float v)
{
    if (!std::isfinite(v)) {
        s += "nan";
        return;
    }
    char buf[24];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    s.append(buf, r.ptr);
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

}  // namespace

double wrap_phase(double x) noexcept
{
    double r = std::remainder(x, two_pi);
    if (r <= -std::numbers::pi)
        r += two_pi;
    else if (r > std::numbers::pi)
        r -= two_pi;
    return r;
}

std::vector<double> unwrap_time(std::span<const double> series)
{
    std::vector<double> out(series.begin(), series.end());
    std::int64_t turns = 0;
    for (std::size_t i = 1; i < series.size(); ++i) {
        turns += turn_correction(series[i] - series[i - 1]);
        out[i] = series[i] + two_pi * static_cast<double>(turns);
    }
    return out;
}

void differential_from_phases(std::span<const double> raw, std::size_t gauge_bins, std::span<double> out)
{
    if (gauge_bins == 0 || gauge_bins >= raw.size())
        throw ArgumentError("differential phase: gauge_bins must lie in [1, n_bins)");
    const std::size_t n = raw.size() - gauge_bins;
    if (out.size() < n)
        throw ArgumentError("differential phase: output too small");
    for (std::size_t k = 0; k < n; ++k)
        out[k] = wrap_phase(raw[k + gauge_bins] - raw[k]);
}

std::vector<double> PhaseMatrix::pulse_times() const
{
    std::vector<double> t(n_pulses);
    for (std::size_t p = 0; p < n_pulses; ++p)
        t[p] = pulse_time(p);
    return t;
}

double PhaseMatrix::column_position(std::size_t k) const noexcept
{
    return (static_cast<double>(meta.first_bin + k) + 0.5 * static_cast<double>(gauge_bins) + 0.5) * meta.bin_spacing;
}

std::size_t PhaseMatrix::nearest_column(double position) const noexcept
{
    const double x = position / meta.bin_spacing - 0.5 * static_cast<double>(gauge_bins) - 0.5 -
                     static_cast<double>(meta.first_bin);
    if (!(x > 0.0) || n_cols == 0)
        return 0;
    return std::min(n_cols - 1, static_cast<std::size_t>(std::llround(x)));
}

std::vector<double> PhaseMatrix::column(std::size_t k) const
{
    std::vector<double> c(n_pulses);
    for (std::size_t p = 0; p < n_pulses; ++p)
        c[p] = values[p * n_cols + k];
    return c;
}

std::size_t PhaseMatrix::masked_count(std::size_t k) const
{
    std::size_t n = 0;
    for (std::size_t p = 0; p < n_pulses; ++p)
        n += mask[p * n_cols + k] != 0;
    return n;
}

std::size_t gauge_bins_for(double gauge_length, double bin_spacing, std::size_t n_bins)
{
    if (!(std::isfinite(gauge_length) && gauge_length > 0.0))
        throw ArgumentError("gauge length must be > 0");
    if (!(bin_spacing > 0.0))
        throw ArgumentError("bin spacing must be > 0");
    const double g = std::round(gauge_length / bin_spacing);
    if (g < 1.0)
        throw ArgumentError("gauge length " + std::to_string(gauge_length) + " m is shorter than one range bin");
    if (g >= static_cast<double>(n_bins))
        throw ArgumentError("gauge length " + std::to_string(gauge_length) + " m is not shorter than the fiber (" +
                            std::to_string(static_cast<double>(n_bins) * bin_spacing) + " m)");
    return static_cast<std::size_t>(g);
}

DifferentialPhaser::DifferentialPhaser(const TraceMeta& meta, std::size_t n_bins, double gauge_length,
                                       PhaseOptions options)
    : meta_(meta),
      n_bins_(n_bins),
      gauge_length_(gauge_length),
      gauge_bins_(gauge_bins_for(gauge_length, meta.bin_spacing, n_bins)),
      n_cols_(n_bins - gauge_bins_),
      options_(options),
      state_(n_cols_)
{
    if (!(options.fade_fraction >= 0.0 && options.fade_fraction < 1.0))
        throw ArgumentError("fade_fraction must lie in [0, 1)");
    if (options.reference_rows == 0)
        throw ArgumentError("reference_rows must be >= 1");
}

PhaseMatrix DifferentialPhaser::describe(std::size_t n_pulses) const
{
    PhaseMatrix m;
    m.meta = meta_;
    m.gauge_length = gauge_length_;
    m.gauge_bins = gauge_bins_;
    m.n_pulses = n_pulses;
    m.n_cols = n_cols_;
    return m;
}

void DifferentialPhaser::calibrate(std::span<const std::complex<float>> rows, std::size_t n_rows)
{
    const std::size_t r = std::min(n_rows, options_.reference_rows);
    double sum = 0.0;
    for (std::size_t i = 0; i < r * n_bins_; ++i)
        sum += std::norm(std::complex<double>(rows[i]));
    const double rms = r > 0 ? std::sqrt(sum / static_cast<double>(r * n_bins_)) : 0.0;
    threshold_ = options_.fade_fraction * rms;
}

void DifferentialPhaser::raw_phases(std::span<const std::complex<float>> rows, std::size_t r0, std::size_t r1,
                                    std::vector<double>& raw, std::vector<std::uint8_t>& faded) const
{
    for (std::size_t r = r0; r < r1; ++r) {
        const std::complex<float>* in = rows.data() + r * n_bins_;
        double* ph = raw.data() + r * n_bins_;
        std::uint8_t* f = faded.data() + r * n_bins_;
        for (std::size_t k = 0; k < n_bins_; ++k) {
            const double re = in[k].real();
            const double im = in[k].imag();
            const double a = std::sqrt(re * re + im * im);
            const bool low = !(a > threshold_) || a == 0.0;
            f[k] = low;
            ph[k] = low ? 0.0 : std::atan2(im, re);
        }
    }
}

void DifferentialPhaser::unwrap_columns(std::size_t c0, std::size_t c1, std::size_t n_rows,
                                        const std::vector<double>& raw, const std::vector<std::uint8_t>& faded,
                                        std::span<float> values, std::span<std::uint8_t> mask)
{
    const std::size_t g = gauge_bins_;
    for (std::size_t c = c0; c < c1; ++c) {
        ColumnState s = state_[c];
        for (std::size_t r = 0; r < n_rows; ++r) {
            const std::size_t i = r * n_bins_ + c;
            const std::size_t o = r * n_cols_ + c;
            if (faded[i] || faded[i + g]) {
                values[o] = static_cast<float>(s.held);
                mask[o] = 1;
                continue;
            }
            const double w = wrap_phase(raw[i + g] - raw[i]);
            if (s.started)
                s.turns += turn_correction(w - s.last_wrapped);
            s.started = true;
            s.last_wrapped = w;
            s.held = w + two_pi * static_cast<double>(s.turns);
            values[o] = static_cast<float>(s.held);
            mask[o] = 0;
        }
        state_[c] = s;
    }
}

void DifferentialPhaser::process(std::span<const std::complex<float>> rows, std::size_t n_rows,
                                 std::span<float> values, std::span<std::uint8_t> mask)
{
    if (rows.size() < n_rows * n_bins_ || values.size() < n_rows * n_cols_ || mask.size() < n_rows * n_cols_)
        throw ArgumentError("DifferentialPhaser: buffer size mismatch");
    if (threshold_ < 0.0)
        calibrate(rows, n_rows);
    raw_.resize(n_rows * n_bins_);
    faded_.resize(n_rows * n_bins_);
    parallel_for(n_rows, true, [&](std::size_t r) { raw_phases(rows, r, r + 1, raw_, faded_); });
    constexpr std::size_t chunk = 64;
    const std::size_t n_chunks = (n_cols_ + chunk - 1) / chunk;
    parallel_for(n_chunks, true, [&](std::size_t b) {
        unwrap_columns(b * chunk, std::min(n_cols_, (b + 1) * chunk), n_rows, raw_, faded_, values, mask);
    });
}

void DifferentialPhaser::process_serial(std::span<const std::complex<float>> rows, std::size_t n_rows,
                                        std::span<float> values, std::span<std::uint8_t> mask)
{
    if (rows.size() < n_rows * n_bins_ || values.size() < n_rows * n_cols_ || mask.size() < n_rows * n_cols_)
        throw ArgumentError("DifferentialPhaser: buffer size mismatch");
    if (threshold_ < 0.0)
        calibrate(rows, n_rows);
    raw_.resize(n_rows * n_bins_);
    faded_.resize(n_rows * n_bins_);
    raw_phases(rows, 0, n_rows, raw_, faded_);
    unwrap_columns(0, n_cols_, n_rows, raw_, faded_, values, mask);
}

PhaseMatrix differential_phase(const TraceMatrix& traces, double gauge_length, PhaseOptions options)
{
    DifferentialPhaser phaser(traces.meta, traces.n_bins, gauge_length, options);
    PhaseMatrix m = phaser.describe(traces.n_pulses);
    m.values.resize(m.n_pulses * m.n_cols);
    m.mask.resize(m.n_pulses * m.n_cols);
    phaser.process(traces.samples, traces.n_pulses, m.values, m.mask);
    return m;
}

// Activity ------------------------------------------------------------------

double ActivityMap::window_center(std::size_t w) const noexcept
{
    return t0 + (static_cast<double>(w * hop_pulses) + 0.5 * static_cast<double>(window_pulses - 1)) / repetition_rate;
}

std::size_t ActivityMap::nearest_column(double position) const noexcept
{
    const double x = (position - column_origin) / bin_spacing;
    if (!(x > 0.0) || n_cols == 0)
        return 0;
    return std::min(n_cols - 1, static_cast<std::size_t>(std::llround(x)));
}

ActivityAccumulator::ActivityAccumulator(const PhaseMatrix& shape, double window, double hop) : n_cols_(shape.n_cols)
{
    const double rep = shape.meta.repetition_rate;
    if (!(std::isfinite(window) && std::isfinite(hop)))
        throw ArgumentError("activity window and hop must be finite");
    if (!(hop > 0.0))
        throw ArgumentError("activity hop must be > 0");
    const double wp = std::round(window * rep);
    const double hp = std::round(hop * rep);
    if (wp < 2.0)
        throw ArgumentError("activity window must cover at least 2 pulse periods");
    if (hp < 1.0)
        throw ArgumentError("activity hop must cover at least 1 pulse period");
    if (wp > static_cast<double>(shape.n_pulses))
        throw ArgumentError("activity window (" + std::to_string(window) + " s) is longer than the session (" +
                            std::to_string(static_cast<double>(shape.n_pulses) / rep) + " s)");
    window_ = static_cast<std::size_t>(wp);
    hop_ = static_cast<std::size_t>(hp);
    expected_windows_ = (shape.n_pulses - window_) / hop_ + 1;
    ring_values_.resize(window_ * n_cols_);
    ring_mask_.resize(window_ * n_cols_);
    map_.n_cols = n_cols_;
    map_.window_duration = static_cast<double>(window_) / rep;
    map_.hop = static_cast<double>(hop_) / rep;
    map_.window_pulses = window_;
    map_.hop_pulses = hop_;
    map_.t0 = shape.meta.t0;
    map_.repetition_rate = rep;
    map_.column_origin = shape.column_position(0);
    map_.bin_spacing = shape.meta.bin_spacing;
    map_.values.reserve(expected_windows_ * n_cols_);
    map_.valid.reserve(expected_windows_ * n_cols_);
}

void ActivityAccumulator::emit(bool parallel)
{
    const std::size_t base = map_.values.size();
    map_.values.resize(base + n_cols_);
    map_.valid.resize(base + n_cols_);
    const auto min_valid =
        static_cast<std::size_t>(std::ceil(activity_min_valid_fraction * static_cast<double>(window_) - 1e-9));
    constexpr std::size_t chunk = 256;
    const std::size_t n_chunks = (n_cols_ + chunk - 1) / chunk;
    parallel_for(n_chunks, parallel, [&](std::size_t b) {
        const std::size_t c1 = std::min(n_cols_, (b + 1) * chunk);
        for (std::size_t c = b * chunk; c < c1; ++c) {
            std::size_t n = 0;
            double sum = 0.0;
            for (std::size_t r = 0; r < window_; ++r) {
                if (!ring_mask_[r * n_cols_ + c]) {
                    sum += ring_values_[r * n_cols_ + c];
                    ++n;
                }
            }
            if (n < min_valid || n == 0) {
                map_.values[base + c] = 0.0F;
                map_.valid[base + c] = 0;
                continue;
            }
            const double mean = sum / static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t r = 0; r < window_; ++r) {
                if (!ring_mask_[r * n_cols_ + c]) {
                    const double d = ring_values_[r * n_cols_ + c] - mean;
                    ss += d * d;
                }
            }
            map_.values[base + c] = static_cast<float>(std::sqrt(ss / static_cast<double>(n)));
            map_.valid[base + c] = 1;
        }
    });
    ++map_.n_windows;
}

void ActivityAccumulator::push(std::span<const float> values, std::span<const std::uint8_t> mask, std::size_t n_rows)
{
    if (values.size() < n_rows * n_cols_ || mask.size() < n_rows * n_cols_)
        throw ArgumentError("ActivityAccumulator: buffer size mismatch");
    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t slot = rows_seen_ % window_;
        std::copy_n(values.data() + r * n_cols_, n_cols_, ring_values_.data() + slot * n_cols_);
        std::copy_n(mask.data() + r * n_cols_, n_cols_, ring_mask_.data() + slot * n_cols_);
        ++rows_seen_;
        if (rows_seen_ >= window_ && (rows_seen_ - window_) % hop_ == 0)
            emit(true);
    }
}

void ActivityAccumulator::push_serial(std::span<const float> values, std::span<const std::uint8_t> mask,
                                      std::size_t n_rows)
{
    if (values.size() < n_rows * n_cols_ || mask.size() < n_rows * n_cols_)
        throw ArgumentError("ActivityAccumulator: buffer size mismatch");
    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t slot = rows_seen_ % window_;
        std::copy_n(values.data() + r * n_cols_, n_cols_, ring_values_.data() + slot * n_cols_);
        std::copy_n(mask.data() + r * n_cols_, n_cols_, ring_mask_.data() + slot * n_cols_);
        ++rows_seen_;
        if (rows_seen_ >= window_ && (rows_seen_ - window_) % hop_ == 0)
            emit(false);
    }
}

ActivityMap activity_map(const PhaseMatrix& phase, double window, double hop)
{
    ActivityAccumulator acc(phase, window, hop);
    acc.push(phase.values, phase.mask, phase.n_pulses);
    return acc.take();
}

// Spectra ---------------------------------------------------------------------

std::vector<double> hann_window(std::size_t n)
{
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

Spectrogram spectrogram(std::span<const double> series, double repetition_rate, std::size_t window_length,
                        std::size_t hop, WindowKind window_kind, double t0)
{
    if (window_length < 16 || window_length % 2 != 0)
        throw ArgumentError("spectrogram: window_length must be even and >= 16");
    if (hop < 1)
        throw ArgumentError("spectrogram: hop must be >= 1");
    if (!(repetition_rate > 0.0))
        throw ArgumentError("spectrogram: repetition_rate must be > 0");
    if (series.size() < window_length)
        throw ArgumentError("spectrogram: series (" + std::to_string(series.size()) +
                            " samples) is shorter than the window (" + std::to_string(window_length) + ")");
    Spectrogram s;
    s.window_length = window_length;
    s.hop = hop;
    s.window_kind = window_kind;
    const auto w = hann_window(window_length);
    for (double v : w)
        s.window_energy += v * v;
    s.n_frames = (series.size() - window_length) / hop + 1;
    s.n_freq = window_length / 2 + 1;
    s.frequencies.resize(s.n_freq);
    for (std::size_t k = 0; k < s.n_freq; ++k)
        s.frequencies[k] = static_cast<double>(k) * repetition_rate / static_cast<double>(window_length);
    s.frame_times.resize(s.n_frames);
    s.power.resize(s.n_frames * s.n_freq);
    s.magnitudes_db.resize(s.n_frames * s.n_freq);

    const double norm = static_cast<double>(window_length) * s.window_energy;
    detail::RealFft fft(window_length);
    std::vector<double> buf(window_length);
    std::vector<std::complex<double>> spec(s.n_freq);
    for (std::size_t f = 0; f < s.n_frames; ++f) {
        const std::size_t start = f * hop;
        s.frame_times[f] =
            t0 + (static_cast<double>(start) + 0.5 * static_cast<double>(window_length - 1)) / repetition_rate;
        for (std::size_t i = 0; i < window_length; ++i)
            buf[i] = series[start + i] * w[i];
        fft.forward(buf, spec);
        for (std::size_t k = 0; k < s.n_freq; ++k) {
            const double scale = (k == 0 || k == s.n_freq - 1) ? 1.0 : 2.0;
            const double p = scale * std::norm(spec[k]) / norm;
            s.power[f * s.n_freq + k] = p;
            s.magnitudes_db[f * s.n_freq + k] = p > 0.0 ? std::max(spectrogram_floor_db, 10.0 * std::log10(p))
                                                        : spectrogram_floor_db;
        }
    }
    return s;
}

namespace {

/// One-sided periodogram of the mean-removed series, normalised so the bins sum to the variance.
void periodogram(const detail::RealFft& fft, std::span<const double> series, std::vector<double>& buf,
                 std::vector<std::complex<double>>& spec, std::vector<double>& power)
{
    const std::size_t n = series.size();
    double mean = 0.0;
    for (double v : series)
        mean += v;
    mean /= static_cast<double>(n);
    buf.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        buf[i] = series[i] - mean;
    spec.resize(fft.bins());
    fft.forward(buf, spec);
    power.resize(fft.bins());
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    for (std::size_t k = 0; k < fft.bins(); ++k) {
        const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
        power[k] = (edge ? 1.0 : 2.0) * std::norm(spec[k]) / n2;
    }
}

bool in_band(std::size_t k, std::size_t n, double rate, Band band)
{
    const double f = static_cast<double>(k) * rate / static_cast<double>(n);
    return f >= band.low && f <= band.high;
}

double sum_band(const std::vector<double>& power, std::size_t n, double rate, Band band)
{
    double s = 0.0;
    for (std::size_t k = 0; k < power.size(); ++k)
        if (in_band(k, n, rate, band))
            s += power[k];
    return s;
}

void awgn_series(const detail::RealFft& fft, std::span<double> series, double rate, double delta_db, Band band,
                 std::uint64_t seed, std::uint64_t column)
{
    if (delta_db == 0.0)
        return;
    const std::size_t n = series.size();
    std::vector<double> buf;
    std::vector<std::complex<double>> spec;
    std::vector<double> power;
    periodogram(fft, series, buf, spec, power);
    const double p_band = sum_band(power, n, rate, band);
    const double target = p_band * (std::pow(10.0, delta_db / 10.0) - 1.0);
    if (!(target > 0.0))
        return;

    rng::Stream stream(rng::key(seed, rng::Purpose::awgn, column));
    std::vector<double> noise(n);
    for (auto& v : noise)
        v = stream.normal();
    fft.forward(noise, spec);
    for (std::size_t k = 0; k < spec.size(); ++k)
        if (!in_band(k, n, rate, band))
            spec[k] = 0.0;
    fft.inverse(spec, noise);
    periodogram(fft, noise, buf, spec, power);
    const double p_noise = sum_band(power, n, rate, band);
    if (!(p_noise > 0.0))
        return;
    const double gain = std::sqrt(target / p_noise);
    double mean = 0.0;
    for (double v : noise)
        mean += v;
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        series[i] += gain * (noise[i] - mean);
}

}  // namespace

double band_power(std::span<const double> series, double repetition_rate, double f_low, double f_high)
{
    if (series.size() < 2)
        throw ArgumentError("band_power: series needs at least 2 samples");
    if (!(repetition_rate > 0.0) || !(f_low < f_high))
        throw ArgumentError("band_power: invalid band");
    detail::RealFft fft(series.size());
    std::vector<double> buf;
    std::vector<std::complex<double>> spec;
    std::vector<double> power;
    periodogram(fft, series, buf, spec, power);
    return sum_band(power, series.size(), repetition_rate, Band{f_low, f_high});
}

void check_awgn_args(double repetition_rate, double delta_db, Band band)
{
    if (!std::isfinite(delta_db))
        throw ArgumentError("add_awgn: delta_db must be finite");
    if (delta_db < 0.0)
        throw ArgumentError("add_awgn: delta_db must be >= 0 (noise cannot be removed)");
    if (!(repetition_rate > 0.0))
        throw ArgumentError("add_awgn: repetition_rate must be > 0");
    if (!(band.low >= 0.0 && band.low < band.high && band.high <= repetition_rate / 2.0))
        throw ArgumentError("add_awgn: band must satisfy 0 <= f_low < f_high <= repetition_rate / 2");
}

void add_awgn_series(std::span<double> series, double repetition_rate, double delta_db, Band band,
                     std::uint64_t seed, std::uint64_t column)
{
    check_awgn_args(repetition_rate, delta_db, band);
    if (delta_db == 0.0 || series.size() < 2)
        return;
    detail::RealFft fft(series.size());
    awgn_series(fft, series, repetition_rate, delta_db, band, seed, column);
}

namespace {

/// Column-major block [c0, c0 + nc) of `n` samples per column, noise added in place.
void awgn_block(std::span<float> block, std::size_t n, std::size_t c0, std::size_t nc, double rate, double delta_db,
                Band band, std::uint64_t seed)
{
    detail::RealFft fft(n);
    parallel_for(nc, true, [&](std::size_t j) {
        std::vector<double> col(n);
        float* src = block.data() + j * n;
        std::copy_n(src, n, col.data());
        awgn_series(fft, col, rate, delta_db, band, seed, c0 + j);
        for (std::size_t i = 0; i < n; ++i)
            src[i] = static_cast<float>(col[i]);
    });
}

}  // namespace

PhaseMatrix add_awgn(const PhaseMatrix& phase, double delta_db, Band band, std::uint64_t seed)
{
    check_awgn_args(phase.meta.repetition_rate, delta_db, band);
    PhaseMatrix out = phase;
    if (delta_db == 0.0 || phase.n_pulses < 2)
        return out;
    const std::size_t n = phase.n_pulses;
    const std::size_t nc = phase.n_cols;
    std::vector<float> block(n * nc);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < nc; ++c)
            block[c * n + p] = phase.values[p * nc + c];
    awgn_block(block, n, 0, nc, phase.meta.repetition_rate, delta_db, band, seed);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < nc; ++c)
            out.values[p * nc + c] = block[c * n + p];
    return out;
}

// PHIPHS01 --------------------------------------------------------------------

namespace {

void write_phase_header(std::ostream& out, const PhaseMatrix& m)
{
    out.write(phase_magic, 8);
    binio::put<std::uint32_t>(out, phase_version);
    binio::put<double>(out, m.meta.adc_rate);
    binio::put<double>(out, m.meta.repetition_rate);
    binio::put<double>(out, m.meta.bin_spacing);
    binio::put<double>(out, m.meta.group_index);
    binio::put<double>(out, m.meta.t0);
    binio::put<std::uint64_t>(out, m.n_pulses);
    binio::put<std::uint64_t>(out, m.n_cols);
    binio::put<std::uint64_t>(out, m.meta.seed);
    binio::put<double>(out, m.gauge_length);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.gauge_bins));
}

PhaseMatrix read_phase_header(std::istream& in)
{
    binio::expect_magic(in, phase_magic);
    const auto version = binio::get<std::uint32_t>(in, "version");
    if (version != phase_version)
        throw FormatError("PHIPHS01: unsupported version " + std::to_string(version));
    PhaseMatrix m;
    m.meta.adc_rate = binio::get<double>(in, "adc_rate_hz");
    m.meta.repetition_rate = binio::get<double>(in, "repetition_rate_hz");
    m.meta.bin_spacing = binio::get<double>(in, "bin_spacing_m");
    m.meta.group_index = binio::get<double>(in, "group_index");
    m.meta.t0 = binio::get<double>(in, "t0_s");
    m.n_pulses = binio::get<std::uint64_t>(in, "n_pulses");
    m.n_cols = binio::get<std::uint64_t>(in, "n_bins");
    m.meta.seed = binio::get<std::uint64_t>(in, "seed");
    m.gauge_length = binio::get<double>(in, "gauge_length_m");
    m.gauge_bins = binio::get<std::uint32_t>(in, "gauge_bins");
    if (!(m.meta.repetition_rate > 0.0) || !(m.meta.bin_spacing > 0.0) || !std::isfinite(m.meta.t0) ||
        m.gauge_bins == 0)
        throw FormatError("PHIPHS01: invalid header values");
    return m;
}

void encode(std::span<const float> values, std::span<const std::uint8_t> mask, std::vector<float>& buf)
{
    buf.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        buf[i] = binio::to_le(mask[i] ? std::numeric_limits<float>::quiet_NaN() : values[i]);
}

/// NaN cells become masked and take the last valid value of their column.
void decode(std::span<float> values, std::span<std::uint8_t> mask, std::size_t n_cols, std::vector<float>& held)
{
    const std::size_t rows = values.size() / n_cols;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            const std::size_t i = r * n_cols + c;
            const float v = binio::to_le(values[i]);
            if (std::isnan(v)) {
                values[i] = held[c];
                mask[i] = 1;
            } else {
                values[i] = v;
                held[c] = v;
                mask[i] = 0;
            }
        }
    }
}

}  // namespace

PhaseFileWriter::PhaseFileWriter(const std::filesystem::path& path, const PhaseMatrix& shape)
    : path_(path), out_(open_out(path)), expected_(shape.n_pulses * shape.n_cols)
{
    write_phase_header(out_, shape);
}

void PhaseFileWriter::write_rows(std::span<const float> values, std::span<const std::uint8_t> mask)
{
    if (mask.size() != values.size())
        throw ArgumentError("PhaseFileWriter: mask size mismatch");
    if (written_ + values.size() > expected_)
        throw ArgumentError("PhaseFileWriter: more values than declared in the header");
    std::vector<float> buf;
    encode(values, mask, buf);
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out_)
        throw IoError("write failed: " + path_.string());
    written_ += values.size();
}

void PhaseFileWriter::close()
{
    if (written_ != expected_)
        throw ArgumentError("PhaseFileWriter: payload incomplete");
    out_.close();
    if (!out_)
        throw IoError("close failed: " + path_.string());
}

PhaseFileReader::PhaseFileReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary)
{
    if (!in_)
        throw IoError("cannot open " + path.string());
    shape_ = read_phase_header(in_);
    payload_offset_ = in_.tellg();
}

std::size_t PhaseFileReader::read_rows(std::size_t count, std::span<float> values, std::span<std::uint8_t> mask)
{
    count = std::min(count, shape_.n_pulses - next_row_);
    const std::size_t n = count * shape_.n_cols;
    if (values.size() < n || mask.size() < n)
        throw ArgumentError("PhaseFileReader: output buffer too small");
    if (n > 0 && !in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw FormatError("PHIPHS01: truncated payload");
    if (next_row_ == 0)
        held_.assign(shape_.n_cols, 0.0F);
    decode(values.first(n), mask.first(n), shape_.n_cols, held_);
    next_row_ += count;
    return count;
}

void PhaseFileReader::read_columns(std::size_t c0, std::size_t nc, std::span<float> values,
                                   std::span<std::uint8_t> mask)
{
    const std::size_t n = shape_.n_pulses;
    if (c0 + nc > shape_.n_cols)
        throw ArgumentError("PhaseFileReader: column range out of bounds");
    if (values.size() < nc * n || mask.size() < nc * n)
        throw ArgumentError("PhaseFileReader: output buffer too small");
    rewind();
    constexpr std::size_t block_rows = 256;
    std::vector<float> rows(block_rows * shape_.n_cols);
    std::vector<std::uint8_t> rmask(rows.size());
    for (std::size_t p = 0; p < n;) {
        const std::size_t got = read_rows(block_rows, rows, rmask);
        for (std::size_t r = 0; r < got; ++r)
            for (std::size_t j = 0; j < nc; ++j) {
                values[j * n + p + r] = rows[r * shape_.n_cols + c0 + j];
                mask[j * n + p + r] = rmask[r * shape_.n_cols + c0 + j];
            }
        p += got;
    }
    rewind();
}

void PhaseFileReader::rewind()
{
    in_.clear();
    in_.seekg(payload_offset_);
    next_row_ = 0;
}

void write_phase(const std::filesystem::path& path, const PhaseMatrix& phase)
{
    PhaseFileWriter w(path, phase);
    w.write_rows(phase.values, phase.mask);
    w.close();
}

PhaseMatrix read_phase(const std::filesystem::path& path)
{
    PhaseFileReader r(path);
    PhaseMatrix m = r.shape();
    m.values.resize(m.n_pulses * m.n_cols);
    m.mask.resize(m.values.size());
    r.read_rows(m.n_pulses, m.values, m.mask);
    return m;
}

void add_awgn_file(const std::filesystem::path& in, const std::filesystem::path& out, double delta_db, Band band,
                   std::uint64_t seed, std::size_t memory_budget)
{
    PhaseFileReader reader(in);
    const PhaseMatrix shape = reader.shape();
    check_awgn_args(shape.meta.repetition_rate, delta_db, band);
    const std::size_t n = shape.n_pulses;
    const std::size_t ncols = shape.n_cols;
    {
        std::ofstream o = open_out(out);
        write_phase_header(o, shape);
        if (!o)
            throw IoError("write failed: " + out.string());
    }
    std::uintmax_t header = 0;
    {
        std::error_code ec;
        header = std::filesystem::file_size(out, ec);
        if (ec)
            throw IoError("cannot stat " + out.string());
        std::filesystem::resize_file(out, header + n * ncols * sizeof(float), ec);
        if (ec)
            throw IoError("cannot size " + out.string());
    }
    std::fstream o(out, std::ios::binary | std::ios::in | std::ios::out);
    if (!o)
        throw IoError("cannot open " + out.string() + " for writing");

    const std::size_t per_col = std::max<std::size_t>(1, n) * (sizeof(float) * 2 + sizeof(std::uint8_t));
    const std::size_t block_cols = std::clamp<std::size_t>(memory_budget / per_col, 1, std::max<std::size_t>(1, ncols));
    std::vector<float> block;
    std::vector<std::uint8_t> mask;
    std::vector<float> line;
    for (std::size_t c0 = 0; c0 < ncols; c0 += block_cols) {
        const std::size_t nc = std::min(block_cols, ncols - c0);
        block.resize(nc * n);
        mask.resize(nc * n);
        reader.read_columns(c0, nc, block, mask);
        if (delta_db > 0.0 && n >= 2)
            awgn_block(block, n, c0, nc, shape.meta.repetition_rate, delta_db, band, seed);
        line.resize(nc);
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t j = 0; j < nc; ++j)
                line[j] = binio::to_le(mask[j * n + p] ? std::numeric_limits<float>::quiet_NaN() : block[j * n + p]);
            o.seekp(static_cast<std::streamoff>(header + (p * ncols + c0) * sizeof(float)));
            o.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(nc * sizeof(float)));
        }
        if (!o)
            throw IoError("write failed: " + out.string());
    }
    o.close();
    if (!o)
        throw IoError("close failed: " + out.string());
}

// CSV -----------------------------------------------------------------------

void write_activity_csv(std::ostream& out, const ActivityMap& map)
{
    std::string line = "time_s";
    for (std::size_t c = 0; c < map.n_cols; ++c) {
        line += ',';
        append_double(line, map.column_position(c));
    }
    line += '\n';
    out << line;
    for (std::size_t w = 0; w < map.n_windows; ++w) {
        line.clear();
        append_double(line, map.window_center(w));
        for (std::size_t c = 0; c < map.n_cols; ++c) {
            line += ',';
            append_float(line, map.is_valid(w, c) ? map.at(w, c) : NAN);
        }
        line += '\n';
        out << line;
    }
}

void write_activity_csv(const std::filesystem::path& path, const ActivityMap& map)
{
    auto out = open_out(path);
    write_activity_csv(out, map);
    if (!out)
        throw IoError("write failed: " + path.string());
}

void write_spectrogram_csv(std::ostream& out, const Spectrogram& s)
{
    std::string line = "time_s";
    for (double f : s.frequencies) {
        line += ',';
        append_double(line, f);
    }
    line += '\n';
    out << line;
    for (std::size_t f = 0; f < s.n_frames; ++f) {
        line.clear();
        append_double(line, s.frame_times[f]);
        for (std::size_t k = 0; k < s.n_freq; ++k) {
            line += ',';
            append_double(line, s.db(f, k));
        }
        line += '\n';
        out << line;
    }
}

void write_spectrogram_csv(const std::filesystem::path& path, const Spectrogram& s)
{
    auto out = open_out(path);
    write_spectrogram_csv(out, s);
    if (!out)
        throw IoError("write failed: " + path.string());
}

}  // namespace phiotdr::dsp
