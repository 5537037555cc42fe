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

#include "omtherm/dynamics.hpp"
#include "omtherm/estimation.hpp"
#include "omtherm/stats.hpp"

using namespace omtherm;

namespace {

EnsembleVariance constant_variance(double value, std::size_t n, double se) {
    EnsembleVariance ev;
    ev.grid = TimeGrid(0, 1e-6, n - 1);
    ev.v_d.assign(n, value);
    ev.stderr.assign(n, se);
    ev.n_samples = 7200;
    return ev;
}

}  // namespace

TEST(forward_filter, inverts_the_synthesis) {
    auto p = reference_parameters();
    TimeGrid g(0, 1e-7, 20000);
    auto v = solve_conditional_variance(p, g, derive_rates(p).v_uc);
    for (std::uint32_t id = 0; id < 3; ++id) {
        auto tr = simulate_trajectory(p, g, v, 31, id);
        auto r_hat = forward_filter(tr.photocurrent, p, g, v);
        for (std::size_t k = 0; k < r_hat.size(); ++k) {
            ASSERT_NEAR(r_hat[k][0], tr.r[k][0], 1e-9);
            ASSERT_NEAR(r_hat[k][1], tr.r[k][1], 1e-9);
        }
    }
}

TEST(forward_filter, zero_input_gives_zero) {
    auto p = reference_parameters();
    TimeGrid g(0, 1e-7, 1000);
    auto v = solve_conditional_variance(p, g, 10.0);
    std::vector<Vec2> zero(g.n_steps, Vec2{0, 0});
    for (const auto &r : forward_filter(zero, p, g, v)) ASSERT_EQ(r, (Vec2{0, 0}));
}

TEST(forward_filter, unmeasured_decay) {
    auto p = reference_parameters();
    p.eta_det = 0;
    TimeGrid g(0, 1e-6, 3000);
    std::vector<double> v(g.points(), derive_rates(p).v_uc);
    std::vector<Vec2> noise(g.n_steps, Vec2{123.0, -7.0});
    auto r = forward_filter(noise, p, g, v, Vec2{2.0, -1.0});
    for (std::size_t k = 0; k < r.size(); k += 100) {
        double expected = std::exp(-p.gamma_m * g.time(k) / 2);
        ASSERT_NEAR(r[k][0], 2.0 * expected, 1e-3 * 2.0 * expected);
        ASSERT_NEAR(r[k][1], -1.0 * expected, 1e-3 * expected);
    }
}

TEST(forward_filter, shape_errors) {
    auto p = reference_parameters();
    TimeGrid g(0, 1e-7, 100);
    std::vector<double> v(g.points(), 1.0);
    std::vector<Vec2> short_record(50);
    ASSERT_THROW(forward_filter(short_record, p, g, v), ShapeError);
    std::vector<Vec2> record(100);
    std::vector<double> short_v(10, 1.0);
    ASSERT_THROW(forward_filter(record, p, g, short_v), ShapeError);
    ASSERT_THROW(backward_filter(short_record, p, g), ShapeError);
}

TEST(backward_filter, zero_input_gives_zero) {
    auto p = reference_parameters();
    TimeGrid g(0, 1e-7, 1000);
    std::vector<Vec2> zero(g.n_steps, Vec2{0, 0});
    for (const auto &r : backward_filter(zero, p, g)) ASSERT_EQ(r, (Vec2{0, 0}));
}

TEST(backward_filter, burn_in_window) {
    auto p = reference_parameters();
    auto d = derive_rates(p);
    ASSERT_NEAR(10.0 / d.lambda_b, 1.934e-3, 1e-6);
    TimeGrid g(0, 1e-7, 30000);
    ASSERT_EQ(burn_in_steps(p, g), static_cast<std::size_t>(std::ceil(10.0 / (d.lambda_b * 1e-7))));
    std::vector<Vec2> zero(g.n_steps, Vec2{0, 0});
    std::vector<double> v(g.points(), 1.0);
    auto fp = filter_record(zero, p, g, v);
    ASSERT_EQ(fp.valid_end, g.points() - burn_in_steps(p, g));
    ASSERT_LE(fp.valid_end + static_cast<std::size_t>(std::ceil(10.0 / (d.lambda_b * g.dt))), g.points());
}

TEST(backward_filter, horizon_shorter_than_burn_in) {
    auto p = reference_parameters();
    TimeGrid g(0, 1e-7, 10000);
    std::vector<Vec2> zero(g.n_steps, Vec2{0, 0});
    std::vector<double> v(g.points(), 1.0);
    ASSERT_THROW(filter_record(zero, p, g, v), GridError);
}

TEST(backward_filter, needs_measurement) {
    auto p = reference_parameters();
    p.eta_det = 0;
    TimeGrid g(0, 1e-7, 100);
    std::vector<Vec2> zero(g.n_steps, Vec2{0, 0});
    ASSERT_THROW(backward_filter(zero, p, g), ParameterRegimeError);
    ASSERT_THROW(burn_in_steps(p, g), ParameterRegimeError);
}

TEST(difference_variance, identical_estimates_give_zero) {
    TimeGrid g(0, 1e-7, 20);
    std::vector<FilteredPath> paths(3);
    for (int i = 0; i < 3; ++i) {
        paths[i].grid = g;
        paths[i].r_hat.assign(g.points(), Vec2{1.0 * i, -2.0 * i});
        paths[i].r_b = paths[i].r_hat;
        paths[i].valid_end = 15;
    }
    auto ev = difference_variance(paths);
    ASSERT_EQ(ev.v_d.size(), 15u);
    ASSERT_EQ(ev.n_samples, 6u);
    for (double x : ev.v_d) ASSERT_EQ(x, 0.0);
}

TEST(difference_variance, pools_quadratures) {
    TimeGrid g(0, 1e-7, 4);
    std::vector<FilteredPath> paths(2);
    for (int i = 0; i < 2; ++i) {
        paths[i].grid = g;
        paths[i].r_hat.assign(g.points(), Vec2{i == 0 ? 1.0 : -1.0, i == 0 ? 3.0 : -3.0});
        paths[i].r_b.assign(g.points(), Vec2{0, 0});
        paths[i].valid_end = 5;
    }
    auto ev = difference_variance(paths);
    // sample variances 2 and 18, pooled mean 10
    ASSERT_DOUBLE_EQ(ev.v_d[0], 10.0);
    ASSERT_DOUBLE_EQ(ev.stderr[0], 10.0 * std::sqrt(2.0 / 3.0));
}

TEST(difference_variance, errors) {
    TimeGrid g(0, 1e-7, 4);
    FilteredPath fp{g, std::vector<Vec2>(5), std::vector<Vec2>(5), 5};
    std::vector<FilteredPath> one{fp};
    ASSERT_THROW(difference_variance(one), StatisticsError);
    FilteredPath other{TimeGrid(0, 2e-7, 4), std::vector<Vec2>(5), std::vector<Vec2>(5), 5};
    std::vector<FilteredPath> mixed{fp, other};
    ASSERT_THROW(difference_variance(mixed), ShapeError);
}

TEST(reconstruction, constant_input_recovers_v_ss) {
    auto p = reference_parameters();
    auto d = derive_rates(p);
    double bias = p.gamma_m / (4 * d.gamma_meas);
    auto ev = constant_variance(2 * d.v_ss + bias, 500, 0.01);
    auto rec = reconstruct_conditional_variance(ev, p, ReconstructionMode::exact);
    ASSERT_NEAR(rec.v_ss_est, d.v_ss, 1e-14);
    for (double x : rec.v) ASSERT_NEAR(x, d.v_ss, 1e-14);
    ASSERT_EQ(rec.tail_begin, 400u);
}

TEST(reconstruction, paper_approx_offset) {
    auto p = reference_parameters();
    auto d = derive_rates(p);
    double bias = p.gamma_m / (4 * d.gamma_meas);
    auto ev = constant_variance(2 * d.v_ss + bias, 500, 0.01);
    auto rec = reconstruct_conditional_variance(ev, p, ReconstructionMode::paper_approx);
    ASSERT_NEAR(rec.v_ss_est / d.v_ss, 1 + p.gamma_m / (8 * d.gamma_meas * d.v_ss), 1e-13);
    ASSERT_NEAR(rec.v_ss_est / d.v_ss - 1, 0.0117, 5e-4);
}

TEST(reconstruction, rejects_drifting_tail) {
    auto p = reference_parameters();
    auto ev = constant_variance(1.0, 500, 1e-3);
    for (std::size_t k = 0; k < ev.v_d.size(); ++k) ev.v_d[k] = 40.0 - 0.05 * static_cast<double>(k);
    ASSERT_THROW(reconstruct_conditional_variance(ev, p, ReconstructionMode::exact), ReconstructionError);
}

TEST(reconstruction, argument_errors) {
    auto p = reference_parameters();
    auto ev = constant_variance(1.0, 500, 1e-3);
    ASSERT_THROW(reconstruct_conditional_variance(ev, p, ReconstructionMode::exact, 0.0), ConfigError);
    ASSERT_THROW(reconstruct_conditional_variance(ev, p, ReconstructionMode::exact, 1.5), ConfigError);
    ASSERT_THROW(reconstruct_conditional_variance(constant_variance(1.0, 5, 1e-3), p, ReconstructionMode::exact),
                 ReconstructionError);
    ASSERT_EQ(parse_mode("exact"), ReconstructionMode::exact);
    ASSERT_EQ(parse_mode("paper-approx"), ReconstructionMode::paper_approx);
    ASSERT_THROW(parse_mode("approx"), ConfigError);
    ASSERT_EQ(to_string(ReconstructionMode::paper_approx), "paper-approx");
}

// Synthetic ensemble at the default size, streamed through the accumulators.
class retrodiction_ensemble : public ::testing::Test {
   protected:
    static void SetUpTestSuite() {
        p_ = reference_parameters();
        grid_ = TimeGrid::from_horizon(1e-7, 3e-3);
        v_ = solve_conditional_variance(p_, grid_, derive_rates(p_).v_uc);
        std::size_t valid_end = grid_.points() - burn_in_steps(p_, grid_);
        std::size_t points = (valid_end + stride - 1) / stride;
        std::vector<DifferenceAccumulator> blocks;
        std::vector<SeriesMoments> moment_blocks;
        for (std::uint32_t start = 0; start < n_traj; start += reduction_block) {
            DifferenceAccumulator acc(grid_, valid_end, stride);
            SeriesMoments m(4, points);
            for (std::uint32_t id = start; id < std::min<std::uint32_t>(n_traj, start + reduction_block); ++id) {
                auto tr = simulate_trajectory(p_, grid_, v_, 555, id);
                auto fp = filter_record(tr.photocurrent, p_, grid_, v_);
                acc.add(fp);
                for (std::size_t j = 0; j < points; ++j) {
                    std::size_t k = j * stride;
                    for (int q = 0; q < 2; ++q) {
                        m.add(q, j, fp.r_b[k][q]);
                        m.add(2 + q, j, fp.r_hat[k][q] * fp.r_b[k][q]);
                    }
                }
                m.finish_sample();
            }
            blocks.push_back(std::move(acc));
            moment_blocks.push_back(std::move(m));
        }
        ev_ = pairwise_merge(std::move(blocks)).result();
        moments_ = pairwise_merge(std::move(moment_blocks));
    }

    static constexpr std::uint32_t n_traj = 3600;
    static constexpr std::size_t stride = 10;
    static inline PhysParams p_;
    static inline TimeGrid grid_;
    static inline std::vector<double> v_;
    static inline EnsembleVariance ev_;
    static inline SeriesMoments moments_;
};

TEST_F(retrodiction_ensemble, initial_and_steady_values) {
    auto d = derive_rates(p_);
    double bias = p_.gamma_m / (4 * d.gamma_meas);
    ASSERT_NEAR(d.v_uc + d.v_ss + bias, 34.2286, 1e-4);
    ASSERT_NEAR(2 * d.v_ss + bias, 1.544612712, 1e-8);
    ASSERT_LE(std::abs(ev_.v_d.front() - (d.v_uc + d.v_ss + bias)), 3 * ev_.stderr.front());
    ASSERT_LE(std::abs(ev_.v_d.back() - (2 * d.v_ss + bias)), 3 * ev_.stderr.back());
    ASSERT_EQ(ev_.n_samples, 2u * n_traj);
    for (double x : ev_.v_d) ASSERT_GE(x, 0.0);
}

TEST_F(retrodiction_ensemble, difference_variance_identity_pointwise) {
    auto d = derive_rates(p_);
    double bias = p_.gamma_m / (4 * d.gamma_meas);
    std::size_t within = 0;
    for (std::size_t j = 0; j < ev_.v_d.size(); ++j) {
        if (std::abs(ev_.v_d[j] - (v_[j * stride] + d.v_ss + bias)) < 3 * ev_.stderr[j]) ++within;
    }
    ASSERT_GE(static_cast<double>(within), 0.99 * static_cast<double>(ev_.v_d.size()));
}

TEST_F(retrodiction_ensemble, backward_variance_is_stationary) {
    auto d = derive_rates(p_);
    ASSERT_NEAR(4 * d.gamma_meas * d.v_e * d.v_e / p_.gamma_m, d.v_e + d.v_uc, 1e-9 * d.v_uc);
    for (std::size_t j = 0; j < moments_.points(); ++j) {
        for (int q = 0; q < 2; ++q) {
            double var = moments_.variance(q, j);
            ASSERT_LE(std::abs(var - (d.v_e + d.v_uc)), 3 * var * std::sqrt(2.0 / (n_traj - 1.0))) << j;
        }
    }
}

TEST_F(retrodiction_ensemble, cross_covariance_identity) {
    auto d = derive_rates(p_);
    for (std::size_t j = 1; j < moments_.points(); ++j) {
        for (int q = 0; q < 2; ++q) {
            double ref = d.v_uc - v_[j * stride];
            ASSERT_LE(std::abs(moments_.mean(2 + q, j) - ref), 3 * moments_.stderr_of_mean(2 + q, j)) << j;
        }
    }
}

TEST_F(retrodiction_ensemble, exact_reconstruction_tracks_riccati) {
    auto rec = reconstruct_conditional_variance(ev_, p_, ReconstructionMode::exact);
    auto d = derive_rates(p_);
    double window = 5.0 / (p_.gamma_m + 8 * p_.eta_det * p_.gamma_qba * d.v_ss);
    double num = 0, den = 0;
    for (std::size_t j = 0; j < rec.v.size() && ev_.grid.time(j) <= window; ++j) {
        double truth = v_[j * stride];
        ASSERT_LE(std::abs(rec.v[j] - truth), 3 * rec.stderr[j]) << j;
        num += (rec.v[j] - truth) * (rec.v[j] - truth);
        den += truth * truth;
    }
    ASSERT_LE(std::sqrt(num / den), 0.05);
}

TEST_F(retrodiction_ensemble, paper_approx_differs_by_the_offset) {
    auto exact = reconstruct_conditional_variance(ev_, p_, ReconstructionMode::exact);
    auto approx = reconstruct_conditional_variance(ev_, p_, ReconstructionMode::paper_approx);
    auto d = derive_rates(p_);
    ASSERT_NEAR(approx.v_ss_est - exact.v_ss_est, p_.gamma_m / (8 * d.gamma_meas), 1e-12);
    ASSERT_NEAR(exact.v_ss_est, d.v_ss, 0.05 * d.v_ss);
}

TEST_F(retrodiction_ensemble, stride_one_matches_subsampled_points) {
    // The pooled variance at a kept point does not depend on the output stride.
    std::size_t valid_end = grid_.points() - burn_in_steps(p_, grid_);
    DifferenceAccumulator fine(grid_, valid_end, 1), coarse(grid_, valid_end, 7);
    for (std::uint32_t id = 0; id < 8; ++id) {
        auto tr = simulate_trajectory(p_, grid_, v_, 9, id);
        auto fp = filter_record(tr.photocurrent, p_, grid_, v_);
        fine.add(fp);
        coarse.add(fp);
    }
    auto a = fine.result(), b = coarse.result();
    for (std::size_t j = 0; j < b.v_d.size(); ++j) ASSERT_EQ(b.v_d[j], a.v_d[7 * j]);
    ASSERT_DOUBLE_EQ(b.grid.dt, 7e-7);
}
