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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "json.hpp"
#include "omtherm/config.hpp"
#include "omtherm/csv.hpp"
#include "omtherm/dynamics.hpp"
#include "omtherm/errors.hpp"
#include "omtherm/estimation.hpp"
#include "omtherm/fullmodel.hpp"
#include "omtherm/model.hpp"
#include "omtherm/stats.hpp"
#include "omtherm/thermo.hpp"

namespace omtherm {

inline constexpr const char *version = "0.1.0";

struct EnsembleSpec {
    PhysParams params;
    TimeGrid grid;
    std::size_t n_traj = 0;
    std::uint64_t master_seed = 0;
    std::size_t stride = 1;     ///< output decimation
    std::size_t n_display = 0;  ///< decimated trajectories kept for display
    std::size_t n_export = 0;   ///< full-resolution trajectories kept for export
    std::size_t workers = 1;
    bool filter = true;
    bool rates = true;
};

/// Output-grid statistics of an ensemble. Path moments are indexed by PathQuantity.
struct EnsembleResult {
    enum PathQuantity : std::size_t { rx = 0, ry, rbx, rby, cross_x, cross_y, theta, count_ };

    TimeGrid grid;
    TimeGrid out_grid;
    std::size_t stride = 1;
    std::vector<double> v;  ///< Riccati solution on `grid`
    std::size_t n_traj = 0;
    std::size_t identity_failures = 0;
    double filter_inversion_error = 0;  ///< max |r_hat - r|
    std::size_t valid_points = 0;       ///< output points where r_b is usable
    SeriesMoments paths;
    std::optional<EnsembleVariance> variance;
    std::optional<EnsembleRates> rates;
    std::vector<Trajectory> display;
    std::vector<Trajectory> exported;

    double v_at(std::size_t j) const { return v[j * stride]; }
};

inline std::size_t output_points(const TimeGrid &grid, std::size_t stride) {
    return (grid.points() + stride - 1) / stride;
}

namespace detail {

struct EnsembleBlock {
    DifferenceAccumulator diff;
    RatesAccumulator rates;
    SeriesMoments paths;
    std::size_t identity_failures = 0;
    double inversion_error = 0;

    void merge(const EnsembleBlock &o) {
        if (o.diff.count()) diff.merge(o.diff);
        if (o.rates.count()) rates.merge(o.rates);
        paths.merge(o.paths);
        identity_failures += o.identity_failures;
        inversion_error = std::max(inversion_error, o.inversion_error);
    }
};

}  // namespace detail

/// Simulates `n_traj` trajectories in blocks of `reduction_block` and reduces the
/// block statistics pairwise, so results do not depend on the worker count.
inline EnsembleResult run_ensemble(const EnsembleSpec &spec) {
    validate(spec.params);
    check_stability(spec.grid, spec.params);
    if (spec.n_traj < 1) throw ValidationError("n_traj must be >= 1");
    if (spec.stride < 1) throw ValidationError("decimation must be >= 1");

    const auto &p = spec.params;
    EnsembleResult res;
    res.grid = spec.grid;
    res.stride = spec.stride;
    res.n_traj = spec.n_traj;
    res.v = solve_conditional_variance(p, spec.grid, derive_rates(p).v_uc);
    const std::size_t n_out = output_points(spec.grid, spec.stride);
    res.out_grid = TimeGrid(spec.grid.t0, spec.grid.dt * static_cast<double>(spec.stride), n_out > 1 ? n_out - 1 : 1);

    std::size_t valid_end = spec.grid.points();
    if (spec.filter) {
        std::size_t burn = burn_in_steps(p, spec.grid);
        if (burn >= spec.grid.points()) {
            throw GridError(fmt::format("horizon of {} s is shorter than the retrodiction burn-in of {} steps",
                                        spec.grid.t_final() - spec.grid.t0, burn));
        }
        valid_end = spec.grid.points() - burn;
    }
    res.valid_points = spec.filter ? (valid_end + spec.stride - 1) / spec.stride : 0;

    const std::size_t n_blocks = (spec.n_traj + reduction_block - 1) / reduction_block;
    std::vector<detail::EnsembleBlock> blocks(n_blocks);
    res.display.resize(std::min(spec.n_display, spec.n_traj));
    res.exported.resize(std::min(spec.n_export, spec.n_traj));

    parallel_for(n_blocks, spec.workers, [&](std::size_t b) {
        detail::EnsembleBlock blk;
        if (spec.filter) blk.diff = DifferenceAccumulator(spec.grid, valid_end, spec.stride);
        if (spec.rates) blk.rates = RatesAccumulator(res.out_grid, n_out);
        blk.paths = SeriesMoments(EnsembleResult::count_, n_out);
        std::size_t stop = std::min(spec.n_traj, (b + 1) * reduction_block);
        for (std::size_t i = b * reduction_block; i < stop; ++i) {
            auto id = static_cast<std::uint32_t>(i);
            auto tr = simulate_trajectory(p, spec.grid, res.v, spec.master_seed, id);
            if (!photocurrent_identity_holds(tr, p)) ++blk.identity_failures;
            std::optional<FilteredPath> fp;
            if (spec.filter) {
                fp = filter_record(tr.photocurrent, p, spec.grid, res.v);
                for (std::size_t k = 0; k < tr.r.size(); ++k) {
                    for (int q = 0; q < 2; ++q) {
                        blk.inversion_error = std::max(blk.inversion_error, std::abs(fp->r_hat[k][q] - tr.r[k][q]));
                    }
                }
                blk.diff.add(*fp);
            }
            for (std::size_t j = 0; j < n_out; ++j) {
                std::size_t k = j * spec.stride;
                const auto &r = tr.r[k];
                blk.paths.add(EnsembleResult::rx, j, r[0]);
                blk.paths.add(EnsembleResult::ry, j, r[1]);
                if (fp) {
                    const auto &rb = fp->r_b[k];
                    blk.paths.add(EnsembleResult::rbx, j, rb[0]);
                    blk.paths.add(EnsembleResult::rby, j, rb[1]);
                    blk.paths.add(EnsembleResult::cross_x, j, fp->r_hat[k][0] * rb[0]);
                    blk.paths.add(EnsembleResult::cross_y, j, fp->r_hat[k][1] * rb[1]);
                }
                GaussianState s{r, res.v[k]};
                blk.paths.add(EnsembleResult::theta, j, theta_of(s));
                if (spec.rates) blk.rates.add(j, s, p);
            }
            blk.paths.finish_sample();
            if (spec.rates) blk.rates.finish_sample();
            if (i < res.display.size()) res.display[i] = decimate(tr, spec.stride);
            if (i < res.exported.size()) res.exported[i] = std::move(tr);
        }
        blocks[b] = std::move(blk);
    });

    auto total = pairwise_merge(std::move(blocks));
    res.paths = std::move(total.paths);
    res.identity_failures = total.identity_failures;
    res.filter_inversion_error = total.inversion_error;
    if (spec.filter && spec.n_traj >= 2) res.variance = total.diff.result();
    if (spec.rates && spec.n_traj >= 2) res.rates = total.rates.result(p);
    return res;
}

/// Everything a run produces before it is written to disk.
struct ExperimentResults {
    ExperimentConfig config;
    std::optional<EnsembleResult> ensemble;
    std::optional<Reconstruction> reconstruction;
    std::optional<ConsistencyReport> fullmodel;
    std::vector<CheckRecord> invariants;
};

namespace detail {

template <class Fn>
auto in_stage(const char *stage, Fn &&fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError &) {
        throw;
    } catch (const std::exception &e) {
        throw StageError(stage, e.what());
    }
}

/// |diff| / se with se floored at the rounding level of `scale`, so that a
/// deterministic sample (se = 0) is compared up to summation round-off.
inline double z_score(double diff, double se, double scale = 0) {
    double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(scale);
    se = std::max(se, floor);
    if (se > 0) return std::abs(diff) / se;
    return diff == 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Relaxation window of the conditional variance: five slowest-mode lifetimes of
/// the linearised Riccati flow around V_ss.
inline double relaxation_window(const PhysParams &p) {
    auto d = derive_rates(p);
    return 5.0 / (p.gamma_m + 8.0 * p.eta_det * p.gamma_qba * d.v_ss);
}

struct ReconstructionScore {
    std::size_t points = 0;
    double max_z = 0;          ///< max |V_rec - V| / stderr over the window
    double fraction_within = 0;  ///< share of window points with z <= 3
    double relative_rms = 0;   ///< ||V_rec - V|| / ||V|| over the window
};

/// Compares a reconstruction with the Riccati truth over the relaxation window.
inline ReconstructionScore score_reconstruction(const Reconstruction &rec, const EnsembleVariance &ev,
                                                const std::vector<double> &v_truth_out, const PhysParams &p) {
    ReconstructionScore s;
    double window = relaxation_window(p);
    double num = 0, den = 0;
    std::size_t within = 0;
    for (std::size_t j = 0; j < rec.v.size(); ++j) {
        if (ev.grid.time(j) - ev.grid.t0 > window) break;
        double diff = rec.v[j] - v_truth_out[j];
        double z = detail::z_score(diff, rec.stderr[j]);
        s.max_z = std::max(s.max_z, z);
        if (z <= 3.0) ++within;
        num += diff * diff;
        den += v_truth_out[j] * v_truth_out[j];
        ++s.points;
    }
    if (s.points == 0) throw ReconstructionError("relaxation window holds no output points");
    s.fraction_within = static_cast<double>(within) / static_cast<double>(s.points);
    s.relative_rms = std::sqrt(num / den);
    return s;
}

/// Max over the display trajectories of |dS/dt - (phi_c + pi_c)| relative to
/// |dS/dt| (first) and to |phi_c| + |pi_c| (second), dS/dt = riccati_rhs(V)/V.
inline std::pair<double, double> entropy_balance_residual(std::span<const Trajectory> trajectories,
                                                          const PhysParams &p) {
    double rel = 0, scaled = 0;
    for (const auto &tr : trajectories) {
        for (std::size_t k = 0; k < tr.r.size(); ++k) {
            GaussianState s{tr.r[k], tr.v[k]};
            auto rates = stochastic_rates(s, p);
            double ds = riccati_rhs(s.v, p) / s.v;
            double res = std::abs(ds - (rates.phi_c + rates.pi_c));
            rel = std::max(rel, ds != 0 ? res / std::abs(ds) : (res == 0 ? 0.0 : std::numeric_limits<double>::infinity()));
            scaled = std::max(scaled, res / (std::abs(rates.phi_c) + std::abs(rates.pi_c)));
        }
    }
    return {rel, scaled};
}

/// Runtime invariant suite evaluated on the simulated ensemble.
inline std::vector<CheckRecord> invariant_checks(const ExperimentResults &r) {
    std::vector<CheckRecord> out;
    const auto &p = r.config.params;
    auto d = derive_rates(p);
    if (!r.ensemble) return out;
    const auto &e = *r.ensemble;
    const auto n = static_cast<double>(e.n_traj);
    const std::size_t n_out = e.paths.points();

    out.push_back(make_check("photocurrent_identity_failures", static_cast<double>(e.identity_failures), 0.0, 0.0));
    if (e.n_traj < 2) return out;

    double z_mean = 0, z_theta = 0, z_var = 0;
    for (std::size_t j = 0; j < n_out; ++j) {
        for (auto q : {EnsembleResult::rx, EnsembleResult::ry}) {
            z_mean = std::max(z_mean, detail::z_score(e.paths.mean(q, j), e.paths.stderr_of_mean(q, j)));
            double var = e.paths.variance(q, j);
            double ref = d.v_uc - e.v_at(j);
            z_var = std::max(z_var, detail::z_score(var - ref, var * std::sqrt(2.0 / (n - 1.0)), d.v_uc));
        }
        z_theta = std::max(z_theta, detail::z_score(e.paths.mean(EnsembleResult::theta, j) - d.v_uc,
                                                    e.paths.stderr_of_mean(EnsembleResult::theta, j), d.v_uc));
    }
    out.push_back(make_check("mean_r_zero_max_z", z_mean, 0.0, 3.0));
    out.push_back(make_check("theta_conservation_max_z", z_theta, 0.0, 3.0));
    out.push_back(make_check("r_variance_self_consistency_max_z", z_var, 0.0, 3.0));

    if (e.variance) {
        out.push_back(make_check("forward_filter_inversion", e.filter_inversion_error, 0.0, 1e-9));
        double z_rb = 0, z_cross = 0;
        for (std::size_t j = 0; j < e.valid_points; ++j) {
            for (auto q : {EnsembleResult::rbx, EnsembleResult::rby}) {
                double var = e.paths.variance(q, j);
                z_rb = std::max(z_rb, detail::z_score(var - (d.v_e + d.v_uc), var * std::sqrt(2.0 / (n - 1.0))));
            }
            for (auto q : {EnsembleResult::cross_x, EnsembleResult::cross_y}) {
                z_cross = std::max(z_cross, detail::z_score(e.paths.mean(q, j) - (d.v_uc - e.v_at(j)),
                                                            e.paths.stderr_of_mean(q, j)));
            }
        }
        out.push_back(make_check("backward_variance_max_z", z_rb, 0.0, 3.0));
        out.push_back(make_check("cross_covariance_max_z", z_cross, 0.0, 3.0));

        const auto &ev = *e.variance;
        double bias = p.gamma_m / (4.0 * d.gamma_meas);
        std::size_t within = 0;
        for (std::size_t j = 0; j < ev.v_d.size(); ++j) {
            double ref = e.v_at(j) + d.v_ss + bias;
            if (std::abs(ev.v_d[j] - ref) < 3.0 * ev.stderr[j]) ++within;
        }
        out.push_back(make_check("difference_variance_fraction_within_3se",
                                 static_cast<double>(within) / static_cast<double>(ev.v_d.size()), 1.0, 0.01));
    }
    if (r.reconstruction && e.variance) {
        std::vector<double> truth(r.reconstruction->v.size());
        for (std::size_t j = 0; j < truth.size(); ++j) truth[j] = e.v_at(j);
        auto score = score_reconstruction(*r.reconstruction, *e.variance, truth, p);
        if (r.config.mode == ReconstructionMode::exact) {
            out.push_back(make_check("reconstruction_window_fraction_within_3se", score.fraction_within, 1.0, 0.0));
            out.push_back(make_check("reconstruction_window_relative_rms", score.relative_rms, 0.0, 0.05));
            out.push_back(make_check("reconstruction_v_ss", r.reconstruction->v_ss_est, d.v_ss, 0.02));
        } else {
            out.push_back(make_check("reconstruction_v_ss", r.reconstruction->v_ss_est, d.v_ss, 0.02));
        }
    }
    if (e.rates) {
        const auto &er = *e.rates;
        auto unc = unconditional_rates(p, d.v_uc);
        double z_phi = 0;
        std::size_t within = 0, nonneg = 0;
        for (std::size_t j = 0; j < n_out; ++j) {
            z_phi = std::max(z_phi, detail::z_score(er.phi_mean[j] - unc.phi_uc, er.phi_stderr[j], unc.phi_uc));
            double resid = er.pi_mean[j] - unc.pi_uc - information_rate(e.v_at(j), p);
            if (detail::z_score(resid, er.pi_stderr[j], unc.pi_uc) <= 3.0) ++within;
            if (er.pi_mean[j] >= -3.0 * er.pi_stderr[j]) ++nonneg;
        }
        out.push_back(make_check("flux_matches_unconditional_max_z", z_phi, 0.0, 3.0));
        out.push_back(make_check("production_decomposition_fraction_within_3se",
                                 static_cast<double>(within) / static_cast<double>(n_out), 1.0, 0.01));
        out.push_back(make_check("ensemble_production_nonnegative_fraction",
                                 static_cast<double>(nonneg) / static_cast<double>(n_out), 1.0, 0.0));
    }
    if (!e.display.empty()) {
        auto [rel, scaled] = entropy_balance_residual(e.display, p);
        out.push_back(make_check("entropy_balance_max_relative", rel, 0.0, 1e-9));
        out.push_back(make_check("entropy_balance_max_scaled", scaled, 0.0, 1e-9));
    }
    double info = 0;
    for (std::size_t k = 0; k < e.v.size(); ++k) {
        double b = bath_information_term(e.v[k], p);
        double g = differential_gain(e.v[k], p);
        info = std::max(info, std::abs(information_rate(e.v[k], p) - (b + g)) / (std::abs(b) + std::abs(g)));
    }
    out.push_back(make_check("information_rate_split", info, 0.0, 1e-12));
    return out;
}

/// Runs the configured pipelines in memory. Failures name the stage.
inline ExperimentResults run_pipelines(const ExperimentConfig &cfg) {
    detail::in_stage("config", [&] { validate(cfg); });
    ExperimentResults res;
    res.config = cfg;
    const bool need_ensemble = cfg.run_variance || cfg.run_thermo || !cfg.run_fullmodel;
    if (need_ensemble) {
        EnsembleSpec spec;
        spec.params = cfg.params;
        spec.grid = cfg.grid();
        spec.n_traj = cfg.n_traj;
        spec.master_seed = cfg.master_seed;
        spec.stride = cfg.decimation;
        spec.n_display = cfg.n_display;
        spec.n_export = cfg.export_trajectories;
        spec.workers = cfg.workers();
        spec.filter = cfg.run_variance;
        spec.rates = cfg.run_thermo;
        res.ensemble = detail::in_stage("simulate", [&] { return run_ensemble(spec); });
    }
    if (cfg.run_variance) {
        res.reconstruction = detail::in_stage("reconstruct", [&] {
            if (!res.ensemble->variance) throw StatisticsError("reconstruction needs at least 2 trajectories");
            return reconstruct_conditional_variance(*res.ensemble->variance, cfg.params, cfg.mode, cfg.tail_fraction);
        });
    }
    if (cfg.run_fullmodel) {
        res.fullmodel = detail::in_stage("check-fullmodel", [&] { return adiabatic_consistency_check(cfg.params); });
    }
    res.invariants = detail::in_stage("invariants", [&] { return invariant_checks(res); });
    return res;
}

enum class Figure { fig1, fig2, fig3 };

inline Figure parse_figure(std::string_view s) {
    if (s == "fig1") return Figure::fig1;
    if (s == "fig2") return Figure::fig2;
    if (s == "fig3") return Figure::fig3;
    throw ConfigError(fmt::format("unknown figure '{}' (expected fig1, fig2 or fig3)", s));
}

inline constexpr std::string_view variance_header = "t,v_riccati,v_reconstructed,stderr";
inline constexpr std::string_view reconstruction_header = "t,v_d,stderr,v_rec";
inline constexpr std::string_view information_header = "t,i_dot,g_diff,bath_term";

/// Variance figure data: Riccati truth against the reconstruction on the valid window.
inline csv::Table variance_table(const EnsembleVariance &ev, const Reconstruction &rec,
                                 const std::vector<double> &v_truth_out) {
    csv::Table t;
    std::size_t n = rec.v.size();
    std::vector<double> time(n);
    for (std::size_t j = 0; j < n; ++j) time[j] = ev.grid.time(j);
    t.add("t", std::move(time));
    t.add("v_riccati", std::vector<double>(v_truth_out.begin(), v_truth_out.begin() + static_cast<std::ptrdiff_t>(n)));
    t.add("v_reconstructed", rec.v);
    t.add("stderr", rec.stderr);
    return t;
}

inline csv::Table reconstruction_table(const EnsembleVariance &ev, const Reconstruction &rec) {
    csv::Table t;
    std::vector<double> time(ev.v_d.size());
    for (std::size_t j = 0; j < time.size(); ++j) time[j] = ev.grid.time(j);
    t.add("t", std::move(time));
    t.add("v_d", ev.v_d);
    t.add("stderr", ev.stderr);
    t.add("v_rec", rec.v);
    return t;
}

/// Entropy-rate figure data: ensemble means with standard errors, then one phi/pi column pair per display trajectory.
inline csv::Table entropy_rates_table(const EnsembleResult &e, const PhysParams &p) {
    if (!e.rates) throw MissingDataError("entropy rates were not computed (thermo pipeline off)");
    const auto &er = *e.rates;
    csv::Table t;
    std::size_t n = er.phi_mean.size();
    std::vector<double> time(n), g(n);
    for (std::size_t j = 0; j < n; ++j) {
        time[j] = er.grid.time(j);
        g[j] = differential_gain(e.v_at(j), p);
    }
    t.add("t", std::move(time));
    t.add("phi_c", er.phi_mean);
    t.add("pi_c", er.pi_mean);
    t.add("i_dot", er.i_dot_mean);
    t.add("g_diff", std::move(g));
    t.add("stderr_phi_c", er.phi_stderr);
    t.add("stderr_pi_c", er.pi_stderr);
    t.add("stderr_i_dot", er.i_dot_stderr);
    for (std::size_t i = 0; i < e.display.size(); ++i) {
        auto es = entropy_series(e.display[i], p);
        es.phi_c.resize(n, std::numeric_limits<double>::quiet_NaN());
        es.pi_c.resize(n, std::numeric_limits<double>::quiet_NaN());
        t.add(fmt::format("phi_c_{}", i), std::move(es.phi_c));
        t.add(fmt::format("pi_c_{}", i), std::move(es.pi_c));
    }
    return t;
}

/// Information figure data: the information rate split into bath term and differential gain along V(t).
inline csv::Table information_table(const EnsembleResult &e, const PhysParams &p) {
    std::size_t n = e.out_grid.points();
    std::vector<double> time(n), i_dot(n), g(n), bath(n);
    for (std::size_t j = 0; j < n; ++j) {
        double v = e.v_at(j);
        time[j] = e.out_grid.time(j);
        i_dot[j] = information_rate(v, p);
        g[j] = differential_gain(v, p);
        bath[j] = bath_information_term(v, p);
    }
    csv::Table t;
    t.add("t", std::move(time));
    t.add("i_dot", std::move(i_dot));
    t.add("g_diff", std::move(g));
    t.add("bath_term", std::move(bath));
    return t;
}

/// Ensemble summary of the conditional means.
inline csv::Table ensemble_table(const EnsembleResult &e) {
    std::size_t n = e.paths.points();
    csv::Table t;
    std::vector<double> time(n), v(n);
    for (std::size_t j = 0; j < n; ++j) {
        time[j] = e.out_grid.time(j);
        v[j] = e.v_at(j);
    }
    t.add("t", std::move(time));
    t.add("v", std::move(v));
    auto column = [&](const char *name, auto fn) {
        std::vector<double> c(n);
        for (std::size_t j = 0; j < n; ++j) c[j] = fn(j);
        t.add(name, std::move(c));
    };
    using Q = EnsembleResult::PathQuantity;
    column("mean_rx", [&](std::size_t j) { return e.paths.mean(Q::rx, j); });
    column("mean_ry", [&](std::size_t j) { return e.paths.mean(Q::ry, j); });
    if (e.n_traj >= 2) {
        column("stderr_rx", [&](std::size_t j) { return e.paths.stderr_of_mean(Q::rx, j); });
        column("stderr_ry", [&](std::size_t j) { return e.paths.stderr_of_mean(Q::ry, j); });
        column("var_rx", [&](std::size_t j) { return e.paths.variance(Q::rx, j); });
        column("var_ry", [&](std::size_t j) { return e.paths.variance(Q::ry, j); });
    }
    column("theta_mean", [&](std::size_t j) { return e.paths.mean(Q::theta, j); });
    if (e.n_traj >= 2) {
        column("theta_stderr", [&](std::size_t j) { return e.paths.stderr_of_mean(Q::theta, j); });
    }
    return t;
}

inline std::vector<double> truth_on_output(const EnsembleResult &e) {
    std::vector<double> out(e.out_grid.points());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = e.v_at(j);
    return out;
}

/// Writes the CSV behind one figure into `dir` and returns its path.
inline std::filesystem::path emit_figure_data(const ExperimentResults &r, Figure which,
                                              const std::filesystem::path &dir) {
    if (!r.ensemble) throw MissingDataError("no ensemble was simulated");
    const auto &e = *r.ensemble;
    std::filesystem::path path;
    switch (which) {
        case Figure::fig1:
            if (!r.reconstruction || !e.variance) {
                throw MissingDataError("fig1 needs the variance pipeline");
            }
            path = dir / "variance.csv";
            csv::write(path, variance_table(*e.variance, *r.reconstruction, truth_on_output(e)));
            break;
        case Figure::fig2:
            path = dir / "entropy_rates.csv";
            csv::write(path, entropy_rates_table(e, r.config.params));
            break;
        case Figure::fig3:
            if (!e.rates) throw MissingDataError("fig3 needs the thermo pipeline");
            path = dir / "information.csv";
            csv::write(path, information_table(e, r.config.params));
            break;
    }
    return path;
}

inline nlohmann::ordered_json to_json(const CheckRecord &c) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["value"] = std::isfinite(c.value) ? nlohmann::ordered_json(c.value) : nlohmann::ordered_json(csv::format_number(c.value));
    j["reference"] = c.reference;
    j["tolerance"] = c.tolerance;
    j["pass"] = c.pass;
    return j;
}

inline std::string checks_json(const ExperimentResults &r) {
    nlohmann::ordered_json j;
    bool all = true;
    auto records = nlohmann::ordered_json::array();
    if (r.fullmodel) {
        for (const auto &c : r.fullmodel->checks) {
            records.push_back(to_json(c));
            all = all && c.pass;
        }
    }
    j["fullmodel"] = records;
    auto inv = nlohmann::ordered_json::array();
    for (const auto &c : r.invariants) {
        inv.push_back(to_json(c));
        all = all && c.pass;
    }
    j["invariants"] = inv;
    j["all_pass"] = all;
    return j.dump(2) + "\n";
}

inline nlohmann::ordered_json manifest_json(const ExperimentConfig &cfg, const std::vector<std::string> &files,
                                            double wall_time_s) {
    nlohmann::ordered_json j;
    j["tool"] = "omtherm";
    j["version"] = version;
    j["versions"] = {{"compiler", __VERSION__},
                     {"cxx_standard", static_cast<long>(__cplusplus)},
                     {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                     {"fmt", FMT_VERSION}};
    nlohmann::ordered_json conf;
    for (const auto &[k, v] : config_to_map(cfg)) conf[k] = v;
    j["config"] = conf;
    j["seeds"] = {{"master_seed", cfg.master_seed},
                  {"trajectory_ids", fmt::format("0..{}", cfg.n_traj - 1)},
                  {"generator", "philox4x32-10, key = master seed, counter = (step, trajectory id)"}};
    j["files"] = files;
    j["wall_time_s"] = wall_time_s;
    return j;
}

struct RunSummary {
    ExperimentResults results;
    std::vector<std::filesystem::path> files;
    double wall_time_s = 0;
    std::size_t checks_failed = 0;
};

/// Runs the configured pipelines and writes all data products under cfg.output_dir.
inline RunSummary run_experiment(const ExperimentConfig &cfg) {
    auto start = std::chrono::steady_clock::now();
    RunSummary sum;
    sum.results = run_pipelines(cfg);
    const auto &r = sum.results;
    const auto &dir = cfg.output_dir;
    detail::in_stage("write", [&] {
        std::filesystem::create_directories(dir);
        if (r.ensemble) {
            const auto &e = *r.ensemble;
            sum.files.push_back(dir / "ensemble.csv");
            csv::write(sum.files.back(), ensemble_table(e));
            for (std::size_t i = 0; i < e.exported.size(); ++i) {
                sum.files.push_back(dir / "trajectories" / fmt::format("traj_{:05d}.csv", i));
                csv::write(sum.files.back(), csv::trajectory_table(e.exported[i]));
            }
            if (r.reconstruction && e.variance) {
                sum.files.push_back(emit_figure_data(r, Figure::fig1, dir));
                sum.files.push_back(dir / "reconstruction.csv");
                csv::write(sum.files.back(), reconstruction_table(*e.variance, *r.reconstruction));
            }
            if (e.rates) {
                sum.files.push_back(emit_figure_data(r, Figure::fig2, dir));
                sum.files.push_back(emit_figure_data(r, Figure::fig3, dir));
            }
        }
        sum.files.push_back(dir / "checks.json");
        csv::write_text(sum.files.back(), checks_json(r));
        std::vector<std::string> names;
        for (const auto &f : sum.files) names.push_back(std::filesystem::relative(f, dir).generic_string());
        names.push_back("manifest.json");
        sum.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        sum.files.push_back(dir / "manifest.json");
        csv::write_text(sum.files.back(), manifest_json(cfg, names, sum.wall_time_s).dump(2) + "\n");
    });
    if (r.fullmodel)
        for (const auto &c : r.fullmodel->checks) sum.checks_failed += !c.pass;
    for (const auto &c : r.invariants) sum.checks_failed += !c.pass;
    return sum;
}

/// Difference-variance reconstruction from recorded trajectory files.
struct RecordReconstruction {
    EnsembleVariance variance;
    Reconstruction reconstruction;
    std::vector<double> v_truth;  ///< file `v` column on the output grid
};

inline RecordReconstruction reconstruct_from_records(std::span<const csv::Record> records, const PhysParams &p,
                                                     std::size_t stride, ReconstructionMode mode,
                                                     double tail_fraction) {
    if (records.size() < 2) {
        throw StatisticsError(fmt::format("reconstruction needs >= 2 records, have {}", records.size()));
    }
    std::vector<FilteredPath> paths;
    paths.reserve(records.size());
    for (const auto &rec : records) {
        if (!(rec.grid == records.front().grid)) throw ShapeError("records do not share one time grid");
        check_stability(rec.grid, p);
        paths.push_back(filter_record(rec.photocurrent, p, rec.grid, rec.v));
    }
    RecordReconstruction out;
    out.variance = difference_variance(paths, stride);
    out.reconstruction = reconstruct_conditional_variance(out.variance, p, mode, tail_fraction);
    out.v_truth.resize(out.variance.v_d.size());
    for (std::size_t j = 0; j < out.v_truth.size(); ++j) out.v_truth[j] = records.front().v[j * stride];
    return out;
}

}  // namespace omtherm
