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
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "omtherm/errors.hpp"
#include "omtherm/model.hpp"
#include "omtherm/philox.hpp"

namespace omtherm {

using Vec2 = std::array<double, 2>;

/// Uniform grid t_k = t0 + k dt for k = 0..n_steps.
struct TimeGrid {
    double t0 = 0;
    double dt = 0;
    std::size_t n_steps = 0;

    TimeGrid() = default;
    TimeGrid(double t0_, double dt_, std::size_t n_steps_) : t0(t0_), dt(dt_), n_steps(n_steps_) {
        if (!std::isfinite(t0) || !std::isfinite(dt) || dt <= 0) {
            throw GridError(fmt::format("time step must be finite and > 0, got {}", dt));
        }
        if (n_steps < 1) {
            throw GridError("time grid needs at least one step");
        }
    }

    /// Grid covering [0, t_final] with the step count rounded to the nearest integer.
    static TimeGrid from_horizon(double dt, double t_final) {
        if (!(dt > 0) || !(t_final > 0)) {
            throw GridError(fmt::format("dt and t_final must be > 0 (dt = {}, t_final = {})", dt, t_final));
        }
        auto n = static_cast<std::size_t>(std::llround(t_final / dt));
        return TimeGrid(0.0, dt, n);
    }

    std::size_t points() const { return n_steps + 1; }
    double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
    double t_final() const { return time(n_steps); }

    bool operator==(const TimeGrid &) const = default;
};

/// Largest admissible dt * (gamma_m/2 + 4 eta gamma_qba v_uc).
inline constexpr double stability_guard = 0.05;

inline double fastest_rate(const PhysParams &p) {
    auto d = derive_rates(p);
    return p.gamma_m / 2.0 + 4.0 * d.gamma_meas * d.v_uc;
}

inline void check_stability(const TimeGrid &grid, const PhysParams &p) {
    double x = grid.dt * fastest_rate(p);
    if (!(x < stability_guard)) {
        throw GridError(fmt::format("dt = {} s gives dt * rate = {} >= {}; use dt < {} s", grid.dt, x,
                                    stability_guard, stability_guard / fastest_rate(p)));
    }
}

/// Right-hand side of the conditional variance (Riccati) equation, in 1/s.
inline double riccati_rhs(double v, const PhysParams &p) {
    if (!std::isfinite(v)) {
        throw NumericError(fmt::format("riccati_rhs: non-finite variance {}", v));
    }
    if (v <= 0) {
        throw DomainError(fmt::format("riccati_rhs: variance must be > 0, got {}", v));
    }
    double v_uc = p.n_th + 0.5 + p.gamma_qba / p.gamma_m;
    return p.gamma_m * (v_uc - v) - 4.0 * p.eta_det * p.gamma_qba * v * v;
}

/// Classical RK4 integration of the Riccati equation. Returns grid.points() values.
inline std::vector<double> solve_conditional_variance(const PhysParams &p, const TimeGrid &grid, double v0) {
    check_stability(grid, p);
    if (!(v0 > 0) || !std::isfinite(v0)) {
        throw DomainError(fmt::format("initial variance must be finite and > 0, got {}", v0));
    }
    const double v_uc = p.n_th + 0.5 + p.gamma_qba / p.gamma_m;
    const double a = 4.0 * p.eta_det * p.gamma_qba;
    auto f = [&](double v) { return p.gamma_m * (v_uc - v) - a * v * v; };
    const double h = grid.dt;
    std::vector<double> out(grid.points());
    out[0] = v0;
    double v = v0;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        double k1 = f(v);
        double k2 = f(v + 0.5 * h * k1);
        double k3 = f(v + 0.5 * h * k2);
        double k4 = f(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out[k + 1] = v;
    }
    if (!std::isfinite(v)) {
        throw NumericError("Riccati integration diverged");
    }
    return out;
}

inline GaussianState unconditional_state(const PhysParams &p) {
    return GaussianState{{0.0, 0.0}, derive_rates(p).v_uc};
}

/// One conditional trajectory at full time resolution.
///
/// r and v hold grid.points() samples; dw and photocurrent hold one entry per
/// step k, attached to the interval [t_k, t_k+1).
struct Trajectory {
    TimeGrid grid;
    std::vector<Vec2> r;
    std::vector<double> v;
    std::vector<Vec2> dw;
    std::vector<Vec2> photocurrent;
    std::uint64_t seed = 0;
    std::uint32_t trajectory_id = 0;
};

/// Homodyne signal over one step: i dt = sqrt(4 eta gamma_qba) r dt + dW.
inline double photocurrent_sample(double coupling, double r, double dw, double dt) {
    return (coupling * r * dt + dw) / dt;
}

inline double measurement_coupling(const PhysParams &p) { return std::sqrt(4.0 * p.eta_det * p.gamma_qba); }

/// Euler-Maruyama propagation of the conditional means on a precomputed
/// variance series. Increments come from the counter-based generator keyed by
/// (seed, trajectory_id, step).
inline Trajectory simulate_trajectory(const PhysParams &p, const TimeGrid &grid, std::span<const double> v_series,
                                      std::uint64_t seed, std::uint32_t trajectory_id = 0) {
    if (v_series.size() != grid.points()) {
        throw ShapeError(fmt::format("variance series has {} samples, grid has {}", v_series.size(), grid.points()));
    }
    check_stability(grid, p);
    Trajectory tr;
    tr.grid = grid;
    tr.seed = seed;
    tr.trajectory_id = trajectory_id;
    tr.v.assign(v_series.begin(), v_series.end());
    tr.r.resize(grid.points());
    tr.dw.resize(grid.n_steps);
    tr.photocurrent.resize(grid.n_steps);

    const double dt = grid.dt;
    const double sqrt_dt = std::sqrt(dt);
    const double c = measurement_coupling(p);
    const double decay = p.gamma_m / 2.0;
    Vec2 r{0.0, 0.0};
    tr.r[0] = r;
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        auto z = normal_pair(seed, trajectory_id, k);
        Vec2 dw{sqrt_dt * z[0], sqrt_dt * z[1]};
        double amp = c * v_series[k];
        tr.dw[k] = dw;
        for (int q = 0; q < 2; ++q) {
            tr.photocurrent[k][q] = photocurrent_sample(c, r[q], dw[q], dt);
            r[q] = r[q] - decay * r[q] * dt + amp * dw[q];
        }
        tr.r[k + 1] = r;
    }
    return tr;
}

inline Trajectory simulate_trajectory(const PhysParams &p, const TimeGrid &grid, double v0, std::uint64_t seed,
                                      std::uint32_t trajectory_id = 0) {
    auto v = solve_conditional_variance(p, grid, v0);
    return simulate_trajectory(p, grid, v, seed, trajectory_id);
}

/// True when every stored photocurrent sample equals the synthesis expression bit for bit.
inline bool photocurrent_identity_holds(const Trajectory &tr, const PhysParams &p) {
    const double c = measurement_coupling(p);
    for (std::size_t k = 0; k < tr.photocurrent.size(); ++k) {
        for (int q = 0; q < 2; ++q) {
            if (tr.photocurrent[k][q] != photocurrent_sample(c, tr.r[k][q], tr.dw[k][q], tr.grid.dt)) {
                return false;
            }
        }
    }
    return true;
}

/// Coarse-grained copy keeping every `stride`-th sample. Increments are summed
/// and the photocurrent is averaged over each block, so the result is again a
/// valid (coarser) measurement record. Trailing steps that do not fill a block are dropped.
inline Trajectory decimate(const Trajectory &tr, std::size_t stride) {
    if (stride == 0) {
        throw GridError("decimation stride must be >= 1");
    }
    if (stride == 1) {
        return tr;
    }
    std::size_t blocks = tr.grid.n_steps / stride;
    if (blocks == 0) {
        throw GridError(fmt::format("decimation stride {} exceeds the {} available steps", stride, tr.grid.n_steps));
    }
    Trajectory out;
    out.grid = TimeGrid(tr.grid.t0, tr.grid.dt * static_cast<double>(stride), blocks);
    out.seed = tr.seed;
    out.trajectory_id = tr.trajectory_id;
    out.r.reserve(blocks + 1);
    out.v.reserve(blocks + 1);
    for (std::size_t b = 0; b <= blocks; ++b) {
        out.r.push_back(tr.r[b * stride]);
        out.v.push_back(tr.v[b * stride]);
    }
    out.dw.resize(blocks, Vec2{0, 0});
    out.photocurrent.resize(blocks, Vec2{0, 0});
    for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t j = 0; j < stride; ++j) {
            for (int q = 0; q < 2; ++q) {
                out.dw[b][q] += tr.dw[b * stride + j][q];
                out.photocurrent[b][q] += tr.photocurrent[b * stride + j][q];
            }
        }
        for (int q = 0; q < 2; ++q) {
            out.photocurrent[b][q] /= static_cast<double>(stride);
        }
    }
    return out;
}

}  // namespace omtherm
