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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "omtherm/dynamics.hpp"
#include "omtherm/errors.hpp"
#include "omtherm/model.hpp"
#include "omtherm/stats.hpp"

namespace omtherm {

/// Prediction (forward) filter: the conditional-mean recursion with dW
/// replaced by the measured photocurrent. The NESS start is r(0) = 0.
inline std::vector<Vec2> forward_filter(std::span<const Vec2> photocurrent, const PhysParams &p,
                                        const TimeGrid &grid, std::span<const double> v_series,
                                        Vec2 r0 = {0.0, 0.0}) {
    if (photocurrent.size() != grid.n_steps) {
        throw ShapeError(
            fmt::format("photocurrent has {} samples, grid has {} steps", photocurrent.size(), grid.n_steps));
    }
    if (v_series.size() != grid.points()) {
        throw ShapeError(fmt::format("variance series has {} samples, grid has {}", v_series.size(), grid.points()));
    }
    const double dt = grid.dt;
    const double c = measurement_coupling(p);
    const double a = 4.0 * p.eta_det * p.gamma_qba;
    const double decay = p.gamma_m / 2.0;
    std::vector<Vec2> out(grid.points());
    Vec2 r = r0;
    out[0] = r;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        double v = v_series[k];
        for (int q = 0; q < 2; ++q) {
            r[q] = r[q] + (-decay * r[q] - a * v * r[q]) * dt + c * v * photocurrent[k][q] * dt;
        }
        out[k + 1] = r;
    }
    return out;
}

inline void require_retrodiction(const DerivedRates &d) {
    if (!(d.gamma_meas > 0)) {
        throw ParameterRegimeError("retrodiction needs eta_det * gamma_qba > 0");
    }
    if (!(d.lambda_b > 0) || !std::isfinite(d.lambda_b)) {
        throw ParameterRegimeError(fmt::format(
            "backward filter rate lambda = {} rad/s is not positive; measurement too weak for retrodiction",
            d.lambda_b));
    }
}

/// Number of samples next to the terminal time discarded while the backward
/// filter forgets its terminal condition (10 / lambda).
inline std::size_t burn_in_steps(const PhysParams &p, const TimeGrid &grid) {
    auto d = derive_rates(p);
    require_retrodiction(d);
    return static_cast<std::size_t>(std::ceil(10.0 / (d.lambda_b * grid.dt)));
}

/// Retrodiction (backward) filter with steady backward variance V_E, run in
/// reverse time from r_b(T) = 0:
///   r_b[k] = (1 - lambda dt) r_b[k+1] + sqrt(4 gamma_meas) V_E i[k] dt.
inline std::vector<Vec2> backward_filter(std::span<const Vec2> photocurrent, const PhysParams &p,
                                         const TimeGrid &grid) {
    if (photocurrent.size() != grid.n_steps) {
        throw ShapeError(
            fmt::format("photocurrent has {} samples, grid has {} steps", photocurrent.size(), grid.n_steps));
    }
    auto d = derive_rates(p);
    require_retrodiction(d);
    const double dt = grid.dt;
    const double keep = 1.0 - d.lambda_b * dt;
    const double gain = std::sqrt(4.0 * d.gamma_meas) * d.v_e * dt;
    std::vector<Vec2> out(grid.points());
    Vec2 rb{0.0, 0.0};
    out[grid.n_steps] = rb;
    for (std::size_t k = grid.n_steps; k-- > 0;) {
        for (int q = 0; q < 2; ++q) {
            rb[q] = keep * rb[q] + gain * photocurrent[k][q];
        }
        out[k] = rb;
    }
    return out;
}

/// Predicted and retrodicted means of one record. Indices [0, valid_end) are usable.
struct FilteredPath {
    TimeGrid grid;
    std::vector<Vec2> r_hat;
    std::vector<Vec2> r_b;
    std::size_t valid_end = 0;
};

inline FilteredPath filter_record(std::span<const Vec2> photocurrent, const PhysParams &p, const TimeGrid &grid,
                                  std::span<const double> v_series) {
    FilteredPath fp;
    fp.grid = grid;
    fp.r_hat = forward_filter(photocurrent, p, grid, v_series);
    fp.r_b = backward_filter(photocurrent, p, grid);
    std::size_t burn = burn_in_steps(p, grid);
    if (burn >= grid.points()) {
        throw GridError(fmt::format("horizon of {} s is shorter than the retrodiction burn-in of {} steps",
                                    grid.t_final() - grid.t0, burn));
    }
    fp.valid_end = grid.points() - burn;
    return fp;
}

/// Ensemble variance of d = r_hat - r_b, pooled over both quadratures.
struct EnsembleVariance {
    TimeGrid grid;  ///< output grid; v_d[k] belongs to grid.time(k)
    std::vector<double> v_d;
    std::vector<double> stderr;
    std::size_t n_samples = 0;  ///< pooled samples per time (2 per trajectory)
};

/// Streaming accumulator for the difference statistic on every `stride`-th sample.
class DifferenceAccumulator {
   public:
    DifferenceAccumulator() = default;
    DifferenceAccumulator(const TimeGrid &grid, std::size_t valid_end, std::size_t stride)
        : grid_(grid), stride_(stride), points_((valid_end + stride - 1) / stride), moments_(2, points_) {
        if (stride == 0) throw GridError("stride must be >= 1");
    }

    void add(const FilteredPath &fp) {
        if (!(fp.grid == grid_)) {
            throw ShapeError("filtered path lives on a different grid");
        }
        if ((fp.valid_end + stride_ - 1) / stride_ < points_) {
            throw ShapeError("filtered path has a shorter valid range");
        }
        for (std::size_t j = 0; j < points_; ++j) {
            std::size_t k = j * stride_;
            for (int q = 0; q < 2; ++q) {
                moments_.add(q, j, fp.r_hat[k][q] - fp.r_b[k][q]);
            }
        }
        moments_.finish_sample();
    }

    void merge(const DifferenceAccumulator &o) { moments_.merge(o.moments_); }

    std::size_t count() const { return moments_.count(); }

    EnsembleVariance result() const {
        if (moments_.count() < 2) {
            throw StatisticsError(fmt::format("difference variance needs >= 2 paths, have {}", moments_.count()));
        }
        EnsembleVariance ev;
        ev.grid = TimeGrid(grid_.t0, grid_.dt * static_cast<double>(stride_), points_ > 1 ? points_ - 1 : 1);
        ev.n_samples = 2 * moments_.count();
        ev.v_d.resize(points_);
        ev.stderr.resize(points_);
        double rel = std::sqrt(2.0 / (static_cast<double>(ev.n_samples) - 1.0));
        for (std::size_t j = 0; j < points_; ++j) {
            ev.v_d[j] = 0.5 * (moments_.variance(0, j) + moments_.variance(1, j));
            ev.stderr[j] = ev.v_d[j] * rel;
        }
        return ev;
    }

   private:
    TimeGrid grid_;
    std::size_t stride_ = 1;
    std::size_t points_ = 0;
    SeriesMoments moments_;
};

/// Paths per sequential block before the pairwise tree reduction.
inline constexpr std::size_t reduction_block = 64;

inline EnsembleVariance difference_variance(std::span<const FilteredPath> paths, std::size_t stride = 1) {
    if (paths.size() < 2) {
        throw StatisticsError(fmt::format("difference variance needs >= 2 paths, have {}", paths.size()));
    }
    const auto &grid = paths.front().grid;
    std::size_t valid_end = paths.front().valid_end;
    for (const auto &fp : paths) {
        if (!(fp.grid == grid)) throw ShapeError("filtered paths do not share one grid");
        valid_end = std::min(valid_end, fp.valid_end);
    }
    std::vector<DifferenceAccumulator> blocks;
    for (std::size_t start = 0; start < paths.size(); start += reduction_block) {
        DifferenceAccumulator acc(grid, valid_end, stride);
        std::size_t stop = std::min(paths.size(), start + reduction_block);
        for (std::size_t i = start; i < stop; ++i) acc.add(paths[i]);
        blocks.push_back(std::move(acc));
    }
    return pairwise_merge(std::move(blocks)).result();
}

enum class ReconstructionMode { exact, paper_approx };

inline ReconstructionMode parse_mode(std::string_view s) {
    if (s == "exact") return ReconstructionMode::exact;
    if (s == "paper-approx") return ReconstructionMode::paper_approx;
    throw ConfigError(fmt::format("unknown reconstruction mode '{}' (expected exact or paper-approx)", s));
}

inline std::string_view to_string(ReconstructionMode m) {
    return m == ReconstructionMode::exact ? "exact" : "paper-approx";
}

struct Reconstruction {
    std::vector<double> v;       ///< reconstructed conditional variance on ev.grid
    std::vector<double> stderr;  ///< pointwise uncertainty including the tail estimate
    double v_ss_est = 0;
    double tail_mean = 0;
    std::size_t tail_begin = 0;  ///< first index of the tail window
};

/// Recovers V(t) from V_d(t) = V(t) + V_ss + gamma_m / (4 gamma_meas).
///
/// The steady value comes from the mean of V_d over the last `tail_fraction`
/// of the window. The tail is accepted as stationary when the means of its two
/// halves agree within 3 sigma, with sigma taken from the pointwise stderr
/// (samples inside a half are treated as fully correlated).
inline Reconstruction reconstruct_conditional_variance(const EnsembleVariance &ev, const PhysParams &p,
                                                       ReconstructionMode mode, double tail_fraction = 0.2) {
    if (!(tail_fraction > 0 && tail_fraction <= 1)) {
        throw ConfigError(fmt::format("tail fraction must lie in (0,1], got {}", tail_fraction));
    }
    std::size_t n = ev.v_d.size();
    if (ev.stderr.size() != n) throw ShapeError("v_d and stderr lengths differ");
    auto tail_len = static_cast<std::size_t>(std::floor(tail_fraction * static_cast<double>(n)));
    if (tail_len < 2) {
        throw ReconstructionError(fmt::format("tail window of {} samples is too short; extend the horizon", tail_len));
    }
    std::size_t begin = n - tail_len;
    std::size_t mid = begin + tail_len / 2;
    auto mean_of = [&](const std::vector<double> &xs, std::size_t a, std::size_t b) {
        return pairwise_sum(std::span<const double>(xs).subspan(a, b - a)) / static_cast<double>(b - a);
    };
    double first = mean_of(ev.v_d, begin, mid);
    double second = mean_of(ev.v_d, mid, n);
    double se_first = mean_of(ev.stderr, begin, mid);
    double se_second = mean_of(ev.stderr, mid, n);
    double sigma = std::hypot(se_first, se_second);
    if (std::abs(second - first) > 3.0 * sigma) {
        throw ReconstructionError(fmt::format(
            "V_d tail is not stationary (half means {} vs {}, 3 sigma = {}); use a longer horizon", first, second,
            3.0 * sigma));
    }
    Reconstruction rec;
    rec.tail_begin = begin;
    rec.tail_mean = mean_of(ev.v_d, begin, n);
    double tail_se = mean_of(ev.stderr, begin, n);
    double offset = 0;
    if (mode == ReconstructionMode::exact) {
        auto d = derive_rates(p);
        require_retrodiction(d);
        double bias = p.gamma_m / (4.0 * d.gamma_meas);
        rec.v_ss_est = (rec.tail_mean - bias) / 2.0;
        offset = rec.v_ss_est + bias;
    } else {
        rec.v_ss_est = rec.tail_mean / 2.0;
        offset = rec.v_ss_est;
    }
    rec.v.resize(n);
    rec.stderr.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        rec.v[k] = ev.v_d[k] - offset;
        rec.stderr[k] = std::hypot(ev.stderr[k], tail_se / 2.0);
    }
    return rec;
}

}  // namespace omtherm
