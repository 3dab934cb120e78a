// SPDX-License-Identifier: Apache-2.0
#include "phiotdr/pipeline.hpp"

#include <algorithm>

#include "phiotdr/error.hpp"

namespace phiotdr::pipeline {

Result run(const interrogator::TraceMeta& meta, std::size_t n_pulses, std::size_t n_bins, const RowSource& source,
           const Options& options)
{
    if (options.block_rows == 0)
        throw ArgumentError("pipeline: block_rows must be >= 1");
    dsp::DifferentialPhaser phaser(meta, n_bins, options.gauge_length, options.phase);
    Result res;
    res.shape = phaser.describe(n_pulses);
    const std::size_t nc = res.shape.n_cols;
    for (std::size_t c : options.keep_columns)
        if (c >= nc)
            throw ArgumentError("pipeline: kept column out of range");
    dsp::ActivityAccumulator acc(res.shape, options.activity_window, options.activity_hop);
    std::optional<dsp::PhaseFileWriter> writer;
    if (options.phase_out)
        writer.emplace(*options.phase_out, res.shape);
    res.kept.assign(options.keep_columns.size(), std::vector<double>(n_pulses));
    res.kept_mask.assign(options.keep_columns.size(), std::vector<std::uint8_t>(n_pulses));

    const std::size_t block = options.block_rows;
    std::vector<std::complex<float>> rows(block * n_bins);
    std::vector<float> values(block * nc);
    std::vector<std::uint8_t> mask(block * nc);
    for (std::size_t p = 0; p < n_pulses;) {
        const std::size_t want = std::min(block, n_pulses - p);
        const std::size_t got = source(want, rows);
        if (got != want)
            throw FormatError("pipeline: trace source ended early");
        const std::size_t nv = got * nc;
        if (options.parallel) {
            phaser.process(rows, got, values, mask);
            acc.push(std::span(values).first(nv), std::span(mask).first(nv), got);
        } else {
            phaser.process_serial(rows, got, values, mask);
            acc.push_serial(std::span(values).first(nv), std::span(mask).first(nv), got);
        }
        if (writer)
            writer->write_rows(std::span(values).first(nv), std::span(mask).first(nv));
        for (std::size_t i = 0; i < options.keep_columns.size(); ++i)
            for (std::size_t r = 0; r < got; ++r) {
                res.kept[i][p + r] = values[r * nc + options.keep_columns[i]];
                res.kept_mask[i][p + r] = mask[r * nc + options.keep_columns[i]];
            }
        p += got;
    }
    if (writer)
        writer->close();
    res.activity = acc.take();
    return res;
}

Result run(const interrogator::SessionSynthesizer& synth, const Options& options)
{
    std::size_t next = 0;
    auto source = [&](std::size_t count, std::span<std::complex<float>> out) {
        if (options.parallel)
            synth.synthesize(next, count, out);
        else
            synth.synthesize_serial(next, count, out);
        next += count;
        return count;
    };
    return run(synth.meta(), synth.n_pulses(), synth.n_bins(), source, options);
}

Result run(interrogator::TraceFileReader& reader, const Options& options)
{
    auto source = [&](std::size_t count, std::span<std::complex<float>> out) { return reader.read_rows(count, out); };
    return run(reader.meta(), reader.n_pulses(), reader.n_bins(), source, options);
}

}  // namespace phiotdr::pipeline
