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
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "omtherm/errors.hpp"

// Units used throughout: rates in rad/s, time in s, entropy in nats,
// quadratures dimensionless with [X, Y] = i (vacuum variance 1/2).

namespace omtherm {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

constexpr double hz_to_rad(double f_hz) { return two_pi * f_hz; }
constexpr double rad_to_hz(double omega) { return omega / two_pi; }

/// Physical rates and efficiencies of the monitored resonator.
struct PhysParams {
    double gamma_m = 0;    ///< effective mechanical damping
    double n_th = 0;       ///< effective thermal occupation
    double gamma_qba = 0;  ///< quantum backaction rate
    double eta_det = 0;    ///< detection efficiency
    // Full (cavity-resolved) model only.
    std::optional<double> omega_m;
    std::optional<double> kappa;
    std::optional<double> g;
    double delta = 0;

    bool has_full_model() const { return omega_m && kappa && g; }
};

/// Closed-form quantities that follow from PhysParams.
struct DerivedRates {
    double gamma_meas = 0;  ///< eta_det * gamma_qba
    double coop = 0;        ///< gamma_qba / gamma_m
    double v_uc = 0;        ///< unconditional variance
    double mu = 0;          ///< gamma_m / (8 eta_det gamma_qba); +inf without measurement
    double v_ss = 0;        ///< conditional steady-state variance
    double v_e = 0;         ///< backward (retrodicted) steady variance; +inf without measurement
    double lambda_b = 0;    ///< backward filter rate; +inf without measurement
};

/// First cumulants and isotropic variance of a single-mode Gaussian state.
struct GaussianState {
    std::array<double, 2> r{0.0, 0.0};
    double v = 0.5;
};

/// Slack on the Heisenberg bound v >= 1/2 absorbing integrator round-off.
inline constexpr double heisenberg_tolerance = 1e-9;

inline void check_state(const GaussianState &s) {
    if (!std::isfinite(s.r[0]) || !std::isfinite(s.r[1]) || !std::isfinite(s.v)) {
        throw NumericError("Gaussian state has non-finite components");
    }
    if (s.v < 0.5 - heisenberg_tolerance) {
        throw ValidationError(fmt::format("variance {} violates the Heisenberg bound v >= 1/2", s.v));
    }
}

namespace detail {

inline std::optional<double> take_rate(const std::map<std::string, double> &raw, const std::string &key) {
    auto rad = raw.find(key);
    auto hz = raw.find(key + "_hz");
    if (rad != raw.end() && hz != raw.end()) {
        throw ConfigError(fmt::format("both '{}' and '{}_hz' given; supply exactly one", key, key));
    }
    if (rad != raw.end()) {
        return rad->second;
    }
    if (hz != raw.end()) {
        return hz_to_rad(hz->second);
    }
    return std::nullopt;
}

inline double require_rate(const std::map<std::string, double> &raw, const std::string &key) {
    auto v = take_rate(raw, key);
    if (!v) {
        throw ConfigError(fmt::format("missing required key '{}' (or '{}_hz')", key, key));
    }
    return *v;
}

inline void require_finite(double v, const char *name) {
    if (!std::isfinite(v)) {
        throw ValidationError(fmt::format("{} must be finite, got {}", name, v));
    }
}

}  // namespace detail

/// Relative tolerance on gamma_qba versus 4 g^2 / kappa.
inline constexpr double backaction_consistency_tolerance = 0.05;

inline void validate(const PhysParams &p) {
    detail::require_finite(p.gamma_m, "gamma_m");
    detail::require_finite(p.n_th, "n_th");
    detail::require_finite(p.gamma_qba, "gamma_qba");
    detail::require_finite(p.eta_det, "eta_det");
    detail::require_finite(p.delta, "delta");
    if (p.gamma_m <= 0) {
        throw ValidationError(fmt::format("gamma_m must be > 0, got {}", p.gamma_m));
    }
    if (p.gamma_qba <= 0) {
        throw ValidationError(fmt::format("gamma_qba must be > 0, got {}", p.gamma_qba));
    }
    if (p.n_th < 0) {
        throw ValidationError(fmt::format("n_th must be >= 0, got {}", p.n_th));
    }
    if (p.eta_det < 0 || p.eta_det > 1) {
        throw ValidationError(fmt::format("eta_det must lie in [0,1], got {}", p.eta_det));
    }
    if (p.omega_m) {
        detail::require_finite(*p.omega_m, "omega_m");
        if (*p.omega_m <= 0) {
            throw ValidationError(fmt::format("omega_m must be > 0, got {}", *p.omega_m));
        }
    }
    if (p.kappa) {
        detail::require_finite(*p.kappa, "kappa");
        if (*p.kappa <= 0) {
            throw ValidationError(fmt::format("kappa must be > 0, got {}", *p.kappa));
        }
    }
    if (p.g) {
        detail::require_finite(*p.g, "g");
    }
    if (p.g && p.kappa) {
        double implied = 4.0 * *p.g * *p.g / *p.kappa;
        double rel = std::abs(p.gamma_qba - implied) / p.gamma_qba;
        if (rel >= backaction_consistency_tolerance) {
            throw ValidationError(fmt::format(
                "gamma_qba = {} rad/s is inconsistent with 4 g^2 / kappa = {} rad/s (relative mismatch {} >= {})",
                p.gamma_qba, implied, rel, backaction_consistency_tolerance));
        }
    }
}

/// Builds PhysParams from named quantities. Rates may be given in rad/s under
/// their plain name or in ordinary Hz under `<name>_hz`.
inline PhysParams validate_params(const std::map<std::string, double> &raw) {
    PhysParams p;
    p.gamma_m = detail::require_rate(raw, "gamma_m");
    auto n_th = raw.find("n_th");
    if (n_th == raw.end()) {
        throw ConfigError("missing required key 'n_th'");
    }
    p.n_th = n_th->second;
    p.gamma_qba = detail::require_rate(raw, "gamma_qba");
    auto eta = raw.find("eta_det");
    if (eta == raw.end()) {
        throw ConfigError("missing required key 'eta_det'");
    }
    p.eta_det = eta->second;
    p.omega_m = detail::take_rate(raw, "omega_m");
    p.kappa = detail::take_rate(raw, "kappa");
    p.g = detail::take_rate(raw, "g");
    p.delta = detail::take_rate(raw, "delta").value_or(0.0);
    validate(p);
    return p;
}

/// Inverse of validate_params (rates written in Hz).
inline std::map<std::string, double> params_to_map(const PhysParams &p) {
    std::map<std::string, double> m{
        {"gamma_m_hz", rad_to_hz(p.gamma_m)},
        {"n_th", p.n_th},
        {"gamma_qba_hz", rad_to_hz(p.gamma_qba)},
        {"eta_det", p.eta_det},
        {"delta_hz", rad_to_hz(p.delta)},
    };
    if (p.omega_m) m["omega_m_hz"] = rad_to_hz(*p.omega_m);
    if (p.kappa) m["kappa_hz"] = rad_to_hz(*p.kappa);
    if (p.g) m["g_hz"] = rad_to_hz(*p.g);
    return m;
}

/// Experimental parameter set of the soft-clamped membrane resonator.
inline PhysParams reference_parameters() {
    return validate_params({
        {"gamma_m_hz", 19.0},
        {"n_th", 14.0},
        {"gamma_qba_hz", 360.0},
        {"eta_det", 0.74},
        {"omega_m_hz", 1.14e6},
        {"kappa_hz", 18.5e6},
        {"g_hz", 40.8e3},
    });
}

inline DerivedRates derive_rates(const PhysParams &p) {
    DerivedRates d;
    d.gamma_meas = p.eta_det * p.gamma_qba;
    d.coop = p.gamma_qba / p.gamma_m;
    d.v_uc = p.n_th + 0.5 + d.coop;
    // 1/mu = 8 eta gamma_qba / gamma_m. The root -mu + sqrt(mu (mu + 2 v_uc)) is
    // rewritten as 2 v_uc / (1 + sqrt(1 + 2 v_uc / mu)), which stays finite as eta -> 0.
    double inv_mu = 8.0 * d.gamma_meas / p.gamma_m;
    d.mu = inv_mu > 0 ? 1.0 / inv_mu : std::numeric_limits<double>::infinity();
    d.v_ss = 2.0 * d.v_uc / (1.0 + std::sqrt(1.0 + 2.0 * d.v_uc * inv_mu));
    if (d.gamma_meas > 0) {
        d.v_e = d.v_ss + p.gamma_m / (4.0 * d.gamma_meas);
        d.lambda_b = 4.0 * d.gamma_meas * d.v_e - p.gamma_m / 2.0;
    } else {
        d.v_e = std::numeric_limits<double>::infinity();
        d.lambda_b = std::numeric_limits<double>::infinity();
    }
    for (double x : {d.gamma_meas, d.coop, d.v_uc, d.v_ss}) {
        if (!std::isfinite(x)) {
            throw NumericError("derived rates overflowed");
        }
    }
    if (std::isnan(d.v_e) || std::isnan(d.lambda_b) || std::isnan(d.mu)) {
        throw NumericError("derived rates produced NaN");
    }
    return d;
}

}  // namespace omtherm
