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

#include <cmath>

#include <gtest/gtest.h>

#include "omtherm/philox.hpp"

using namespace omtherm;

// Known-answer vectors of the Random123 reference implementation (philox4x32, 10 rounds).
TEST(philox, known_answer_zero) {
    auto out = Philox4x32::apply({0, 0, 0, 0}, {0, 0});
    Philox4x32::counter_type expected{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u};
    ASSERT_EQ(out, expected);
}

TEST(philox, known_answer_ones) {
    auto out = Philox4x32::apply({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    Philox4x32::counter_type expected{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu};
    ASSERT_EQ(out, expected);
}

TEST(philox, known_answer_pi) {
    auto out = Philox4x32::apply({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    Philox4x32::counter_type expected{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u};
    ASSERT_EQ(out, expected);
}

TEST(philox, unit_interval_bounds) {
    ASSERT_EQ(unit_open_closed(0xffffffffu, 0xffffffffu), 1.0);
    ASSERT_GT(unit_open_closed(0, 0), 0.0);
    ASSERT_EQ(unit_open_closed(0, 0), 0x1.0p-53);
}

TEST(philox, normal_pair_is_stateless) {
    auto a = normal_pair(5, 3, 1000);
    normal_pair(5, 3, 999);
    auto b = normal_pair(5, 3, 1000);
    ASSERT_EQ(a, b);
    ASSERT_NE(normal_pair(5, 3, 1000), normal_pair(5, 4, 1000));
    ASSERT_NE(normal_pair(5, 3, 1000), normal_pair(6, 3, 1000));
    ASSERT_NE(normal_pair(5, 3, 1000), normal_pair(5, 3, 1001));
}

TEST(philox, normal_pair_moments) {
    const int n = 200000;
    double s[2] = {0, 0}, s2[2] = {0, 0}, s4[2] = {0, 0}, cross = 0;
    for (int k = 0; k < n; ++k) {
        auto z = normal_pair(42, 1, static_cast<std::uint64_t>(k));
        for (int q = 0; q < 2; ++q) {
            s[q] += z[q];
            s2[q] += z[q] * z[q];
            s4[q] += z[q] * z[q] * z[q] * z[q];
        }
        cross += z[0] * z[1];
    }
    for (int q = 0; q < 2; ++q) {
        ASSERT_LT(std::abs(s[q] / n), 4.0 / std::sqrt(n));
        ASSERT_LT(std::abs(s2[q] / n - 1.0), 4.0 * std::sqrt(2.0 / n));
        ASSERT_LT(std::abs(s4[q] / n - 3.0), 4.0 * std::sqrt(96.0 / n));
    }
    ASSERT_LT(std::abs(cross / n), 4.0 / std::sqrt(n));
}

TEST(philox, high_step_bits_reach_counter) {
    std::uint64_t step = std::uint64_t{1} << 33;
    ASSERT_NE(normal_pair(1, 0, step), normal_pair(1, 0, step & 0xffffffffu));
}
