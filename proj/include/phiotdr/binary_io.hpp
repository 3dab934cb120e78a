// SPDX-License-Identifier: Apache-2.0
//
// Little-endian field helpers shared by the PHIOTDR1 / PHIPHS01 readers and writers.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "phiotdr/error.hpp"

namespace phiotdr::binio {

template <typename T>
T to_le(T v) noexcept
{
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::array<unsigned char, sizeof(T)> r;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            r[i] = bytes[sizeof(T) - 1 - i];
        return std::bit_cast<T>(r);
    }
}

template <typename T>
void put(std::ostream& out, T v)
{
    v = to_le(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw FormatError(std::string("truncated header field ") + what);
    return to_le(v);
}

inline void expect_magic(std::istream& in, const char (&magic)[9])
{
    char buf[8];
    if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0)
        throw FormatError(std::string("bad magic: expected ") + magic);
}

}  // namespace phiotdr::binio
