// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random streams. Every random quantity in the simulator is
// drawn from a stream keyed by (seed, purpose, index...), so results never
// depend on evaluation order or thread count.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace phiotdr::rng {

/// Stream purposes; part of every key so independent quantities never collide.
enum class Purpose : std::uint64_t {
    scatterer = 1,
    breakdown = 2,
    acoustic = 3,
    floor = 4,
    receiver = 5,
    laser = 6,
    scope = 7,
    awgn = 8,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept
{
    return splitmix64(h ^ (v + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2)));
}

constexpr std::uint64_t key(std::uint64_t seed, Purpose p, std::uint64_t a = 0, std::uint64_t b = 0) noexcept
{
    return mix(mix(mix(splitmix64(seed), static_cast<std::uint64_t>(p)), a), b);
}

/// Key component for a time instant; exact bit pattern, so equal doubles map to equal streams.
inline std::uint64_t time_key(double t) noexcept { return std::bit_cast<std::uint64_t>(t); }

/// xoshiro256** seeded from a single 64-bit key through splitmix64.
class Stream {
public:
    explicit Stream(std::uint64_t k) noexcept
    {
        std::uint64_t x = k;
        for (auto& s : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            s = splitmix64(x);
        }
    }

    std::uint64_t next() noexcept
    {
        const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = std::rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1].
    double uniform_open0() noexcept { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

    /// Standard normal (Marsaglia polar method, pairs cached).
    double normal() noexcept
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace phiotdr::rng
