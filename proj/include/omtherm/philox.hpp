// Copyright 2026 The omtherm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "omtherm/model.hpp"

namespace omtherm {

/// Philox4x32-10 block cipher used as a stateless counter-based generator
/// (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
/// The same (counter, key) always maps to the same 128 output bits.
struct Philox4x32 {
    using counter_type = std::array<std::uint32_t, 4>;
    using key_type = std::array<std::uint32_t, 2>;

    static constexpr std::uint32_t M0 = 0xD2511F53u;
    static constexpr std::uint32_t M1 = 0xCD9E8D57u;
    static constexpr std::uint32_t W0 = 0x9E3779B9u;
    static constexpr std::uint32_t W1 = 0xBB67AE85u;

    static constexpr counter_type round(counter_type c, key_type k) {
        std::uint64_t p0 = std::uint64_t{M0} * c[0];
        std::uint64_t p1 = std::uint64_t{M1} * c[2];
        auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        auto lo0 = static_cast<std::uint32_t>(p0);
        auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }

    static constexpr counter_type apply(counter_type c, key_type k) {
        for (int i = 0; i < 10; ++i) {
            c = round(c, k);
            k[0] += W0;
            k[1] += W1;
        }
        return c;
    }
};

/// Maps 64 random bits to a double in (0, 1].
constexpr double unit_open_closed(std::uint32_t hi, std::uint32_t lo) {
    std::uint64_t bits = (std::uint64_t{hi} << 32) | lo;
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

/// Standard-normal pair for (seed, stream, index). `stream` is the trajectory
/// id and `index` the time step; the two components are the X and Y increments.
inline std::array<double, 2> normal_pair(std::uint64_t seed, std::uint32_t stream, std::uint64_t index) {
    Philox4x32::counter_type ctr{static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream,
                                 0u};
    Philox4x32::key_type key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    auto out = Philox4x32::apply(ctr, key);
    double u1 = unit_open_closed(out[0], out[1]);
    double u2 = unit_open_closed(out[2], out[3]);
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = two_pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
}

}  // namespace omtherm
