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
#include <vector>

#include <fmt/format.h>

#include "omtherm/dynamics.hpp"
#include "omtherm/errors.hpp"
#include "omtherm/model.hpp"
#include "omtherm/stats.hpp"

namespace omtherm {

namespace detail {
inline void require_positive_variance(double v, const char *who) {
    if (!std::isfinite(v)) throw NumericError(fmt::format("{}: non-finite variance {}", who, v));
    if (v <= 0) throw DomainError(fmt::format("{}: variance must be > 0, got {}", who, v));
}
}  // namespace detail

/// Wigner entropy (nats) of an isotropic single-mode Gaussian with variance v.
inline double wigner_entropy(double v) {
    detail::require_positive_variance(v, "wigner_entropy");
    return 1.0 + std::log(two_pi) + std::log(v);
}

/// theta = V + r.r / 2
inline double theta_of(const GaussianState &s) { return s.v + 0.5 * (s.r[0] * s.r[0] + s.r[1] * s.r[1]); }

struct StochasticRates {
    double phi_c = 0;  ///< entropy flux rate, nats/s
    double pi_c = 0;   ///< entropy production rate, nats/s
};

/// Trajectory-level entropy flux and production rates of the conditional state.
inline StochasticRates stochastic_rates(const GaussianState &s, const PhysParams &p) {
    detail::require_positive_variance(s.v, "stochastic_rates");
    const double theta = theta_of(s);
    const double n_half = p.n_th + 0.5;
    const double v_uc = n_half + p.gamma_qba / p.gamma_m;
    StochasticRates out;
    out.phi_c = p.gamma_m / n_half * (n_half - theta) - 4.0 * p.gamma_qba * theta;
    out.pi_c = p.gamma_m * (theta / n_half + v_uc / s.v - 2.0) + 4.0 * p.gamma_qba * (theta - p.eta_det * s.v);
    return out;
}

/// Net information rate; equals dS/dt = (dV/dt)/V under conditioning.
inline double information_rate(double v, const PhysParams &p) {
    detail::require_positive_variance(v, "information_rate");
    const double v_uc = p.n_th + 0.5 + p.gamma_qba / p.gamma_m;
    return p.gamma_m * (v_uc / v - 1.0) - 4.0 * p.eta_det * p.gamma_qba * v;
}

/// Innovation contribution to the information rate.
inline double differential_gain(double v, const PhysParams &p) {
    detail::require_positive_variance(v, "differential_gain");
    return -4.0 * p.eta_det * p.gamma_qba * v;
}

/// Phonon-bath contribution gamma_m (V_uc / V - 1) to the information rate.
inline double bath_information_term(double v, const PhysParams &p) {
    detail::require_positive_variance(v, "bath_information_term");
    const double v_uc = p.n_th + 0.5 + p.gamma_qba / p.gamma_m;
    return p.gamma_m * (v_uc / v - 1.0);
}

struct UnconditionalRates {
    double phi_uc = 0;
    double pi_uc = 0;
};

/// Unconditional flux and production at isotropic variance v, summed over the
/// thermal channel and the two optical (X, Y) channels.
inline UnconditionalRates unconditional_rates(const PhysParams &p, double v) {
    detail::require_positive_variance(v, "unconditional_rates");
    const double n_half = p.n_th + 0.5;
    UnconditionalRates out;
    out.phi_uc = p.gamma_m - v / n_half * p.gamma_m - 4.0 * v * p.gamma_qba;
    out.pi_uc = -2.0 * p.gamma_m + v / n_half * p.gamma_m + n_half * p.gamma_m / v + 4.0 * v * p.gamma_qba +
                p.gamma_qba / v;
    return out;
}

/// Reduced production rate gamma_m [V_uc/(n+1/2) - 1] + 4 gamma_qba V_uc, valid at the NESS only.
inline double reduced_unconditional_production(const PhysParams &p) {
    const double n_half = p.n_th + 0.5;
    const double v_uc = n_half + p.gamma_qba / p.gamma_m;
    return p.gamma_m * (v_uc / n_half - 1.0) + 4.0 * p.gamma_qba * v_uc;
}

/// Unconditional production at the NESS, the reference for the information rate.
inline double ness_production(const PhysParams &p) { return unconditional_rates(p, derive_rates(p).v_uc).pi_uc; }

struct EnergyCurrents {
    double j_th = 0;   ///< quanta/s delivered by the phonon bath
    double j_opt = 0;  ///< quanta/s delivered by the optical (backaction) bath
};

/// Energy currents into the mechanical mode at mean occupation n_mean.
/// Damping sign chosen so that the currents balance at n_th + gamma_qba/gamma_m.
inline EnergyCurrents energy_currents(double n_mean, const PhysParams &p) {
    if (!(n_mean >= 0)) {
        throw DomainError(fmt::format("energy_currents: occupation must be >= 0, got {}", n_mean));
    }
    return {-p.gamma_m * (n_mean - p.n_th), p.gamma_qba};
}

/// Per-sample thermodynamic record of one trajectory.
struct EntropySeries {
    TimeGrid grid;
    std::vector<double> phi_c;
    std::vector<double> pi_c;
    std::vector<double> s_w;
    std::vector<double> i_dot;
    std::vector<double> g_diff;
    std::vector<double> theta;
};

/// Evaluates the rates at every `stride`-th stored sample of the trajectory.
inline EntropySeries entropy_series(const Trajectory &tr, const PhysParams &p, std::size_t stride = 1) {
    if (stride == 0) throw GridError("stride must be >= 1");
    std::size_t n = (tr.grid.points() + stride - 1) / stride;
    EntropySeries es;
    es.grid = TimeGrid(tr.grid.t0, tr.grid.dt * static_cast<double>(stride), n > 1 ? n - 1 : 1);
    for (auto *vec : {&es.phi_c, &es.pi_c, &es.s_w, &es.i_dot, &es.g_diff, &es.theta}) vec->resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t k = j * stride;
        GaussianState s{tr.r[k], tr.v[k]};
        auto rates = stochastic_rates(s, p);
        es.phi_c[j] = rates.phi_c;
        es.pi_c[j] = rates.pi_c;
        es.s_w[j] = wigner_entropy(s.v);
        es.i_dot[j] = information_rate(s.v, p);
        es.g_diff[j] = differential_gain(s.v, p);
        es.theta[j] = theta_of(s);
    }
    return es;
}

/// Ensemble means and standard errors of the stochastic rates.
struct EnsembleRates {
    TimeGrid grid;
    std::size_t n_samples = 0;
    std::vector<double> phi_mean, phi_stderr;
    std::vector<double> pi_mean, pi_stderr;
    std::vector<double> i_dot_mean, i_dot_stderr;  ///< Pi_c - Pi_uc(V_uc)
    std::vector<double> theta_mean, theta_stderr;
};

/// Streaming accumulator of (phi_c, pi_c, theta) over trajectories.
class RatesAccumulator {
   public:
    enum Quantity : std::size_t { phi = 0, pi = 1, theta = 2, count_ = 3 };

    RatesAccumulator() = default;
    RatesAccumulator(const TimeGrid &grid, std::size_t points) : grid_(grid), moments_(count_, points) {}

    void add(std::size_t point, const GaussianState &s, const PhysParams &p) {
        auto r = stochastic_rates(s, p);
        moments_.add(phi, point, r.phi_c);
        moments_.add(pi, point, r.pi_c);
        moments_.add(theta, point, theta_of(s));
    }
    void add(const EntropySeries &es) {
        if (!(es.grid == grid_) || es.phi_c.size() != moments_.points()) {
            throw ShapeError("entropy series lives on a different grid");
        }
        for (std::size_t j = 0; j < es.phi_c.size(); ++j) {
            moments_.add(phi, j, es.phi_c[j]);
            moments_.add(pi, j, es.pi_c[j]);
            moments_.add(theta, j, es.theta[j]);
        }
        moments_.finish_sample();
    }
    void finish_sample() { moments_.finish_sample(); }
    void merge(const RatesAccumulator &o) { moments_.merge(o.moments_); }
    std::size_t count() const { return moments_.count(); }

    EnsembleRates result(const PhysParams &p) const {
        if (moments_.count() < 2) {
            throw StatisticsError(fmt::format("ensemble rates need >= 2 series, have {}", moments_.count()));
        }
        EnsembleRates er;
        er.grid = grid_;
        er.n_samples = moments_.count();
        const double pi_ness = ness_production(p);
        std::size_t n = moments_.points();
        for (auto *v : {&er.phi_mean, &er.phi_stderr, &er.pi_mean, &er.pi_stderr, &er.i_dot_mean, &er.i_dot_stderr,
                        &er.theta_mean, &er.theta_stderr}) {
            v->resize(n);
        }
        for (std::size_t j = 0; j < n; ++j) {
            er.phi_mean[j] = moments_.mean(phi, j);
            er.phi_stderr[j] = moments_.stderr_of_mean(phi, j);
            er.pi_mean[j] = moments_.mean(pi, j);
            er.pi_stderr[j] = moments_.stderr_of_mean(pi, j);
            er.i_dot_mean[j] = er.pi_mean[j] - pi_ness;
            er.i_dot_stderr[j] = er.pi_stderr[j];
            er.theta_mean[j] = moments_.mean(theta, j);
            er.theta_stderr[j] = moments_.stderr_of_mean(theta, j);
        }
        return er;
    }

   private:
    TimeGrid grid_;
    SeriesMoments moments_;
};

inline EnsembleRates ensemble_average_rates(std::span<const EntropySeries> series, const PhysParams &p) {
    if (series.size() < 2) {
        throw StatisticsError(fmt::format("ensemble rates need >= 2 series, have {}", series.size()));
    }
    const auto &grid = series.front().grid;
    std::size_t n = series.front().phi_c.size();
    std::vector<RatesAccumulator> blocks;
    for (std::size_t start = 0; start < series.size(); start += 64) {
        RatesAccumulator acc(grid, n);
        std::size_t stop = std::min(series.size(), start + 64);
        for (std::size_t i = start; i < stop; ++i) acc.add(series[i]);
        blocks.push_back(std::move(acc));
    }
    return pairwise_merge(std::move(blocks)).result(p);
}

}  // namespace omtherm
