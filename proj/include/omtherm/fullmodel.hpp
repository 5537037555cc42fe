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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "omtherm/errors.hpp"
#include "omtherm/model.hpp"
#include "omtherm/thermo.hpp"

// Generic Gaussian models: drift dr = A r dt + ..., covariance
// dV/dt = A V + V A^T + D (unconditional). Quadrature ordering is
// (X_1, Y_1, X_2, Y_2, ...); for the optomechanical model mode 1 is the
// mechanics and mode 2 the cavity.

namespace omtherm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One dissipative output channel.
struct Channel {
    std::string label;
    MatrixXd a_irr;  ///< irreversible drift
    MatrixXd d;      ///< diffusion (symmetric PSD)
};

struct GaussianModel {
    MatrixXd a_ham;
    std::vector<Channel> channels;
    MatrixXd c_meas;
    MatrixXd gamma_meas_mat;

    Eigen::Index dim() const { return a_ham.rows(); }

    MatrixXd total_drift() const {
        MatrixXd a = a_ham;
        for (const auto &ch : channels) a += ch.a_irr;
        return a;
    }
    MatrixXd total_diffusion() const {
        MatrixXd d = MatrixXd::Zero(dim(), dim());
        for (const auto &ch : channels) d += ch.d;
        return d;
    }
};

struct CovMatrix {
    MatrixXd v;
};

/// Symplectic form for `modes` modes in (X, Y) pair ordering.
inline MatrixXd symplectic_form(Eigen::Index modes) {
    MatrixXd omega = MatrixXd::Zero(2 * modes, 2 * modes);
    for (Eigen::Index k = 0; k < modes; ++k) {
        omega(2 * k, 2 * k + 1) = 1.0;
        omega(2 * k + 1, 2 * k) = -1.0;
    }
    return omega;
}

/// Symplectic eigenvalues (each appears twice) from the spectrum of Omega V.
inline VectorXd symplectic_spectrum(const CovMatrix &cov) {
    auto n = cov.v.rows();
    Eigen::EigenSolver<MatrixXd> es(symplectic_form(n / 2) * cov.v, false);
    return es.eigenvalues().cwiseAbs();
}

/// Uncertainty principle V + (i/2) Omega >= 0, i.e. all symplectic eigenvalues >= 1/2.
inline bool is_physical(const CovMatrix &cov, double tol = heisenberg_tolerance) {
    if (cov.v.rows() != cov.v.cols() || cov.v.rows() % 2 != 0) return false;
    if (!cov.v.isApprox(cov.v.transpose(), 1e-12)) return false;
    return symplectic_spectrum(cov).minCoeff() >= 0.5 - tol;
}

inline bool is_hurwitz(const MatrixXd &a) {
    Eigen::EigenSolver<MatrixXd> es(a, false);
    return es.eigenvalues().real().maxCoeff() < 0.0;
}

/// Cavity-resolved optomechanical model with thermal and optical channels.
inline GaussianModel build_optomech_model(const PhysParams &p) {
    if (!p.has_full_model()) {
        throw ConfigError("full model needs omega_m, kappa and g");
    }
    const double wm = *p.omega_m;
    const double kappa = *p.kappa;
    const double g = *p.g;
    const double delta = p.delta;

    GaussianModel m;
    m.a_ham = MatrixXd::Zero(4, 4);
    m.a_ham(0, 1) = wm;
    m.a_ham(1, 0) = -wm;
    m.a_ham(1, 2) = -2.0 * g;
    m.a_ham(2, 3) = -delta;
    m.a_ham(3, 0) = -2.0 * g;
    m.a_ham(3, 2) = delta;

    Channel thermal{"thermal", MatrixXd::Zero(4, 4), MatrixXd::Zero(4, 4)};
    thermal.a_irr(0, 0) = thermal.a_irr(1, 1) = -p.gamma_m / 2.0;
    thermal.d(0, 0) = thermal.d(1, 1) = p.gamma_m * (p.n_th + 0.5);

    Channel optical{"optical", MatrixXd::Zero(4, 4), MatrixXd::Zero(4, 4)};
    optical.a_irr(2, 2) = optical.a_irr(3, 3) = -kappa / 2.0;
    optical.d(2, 2) = optical.d(3, 3) = kappa / 2.0;

    m.channels = {thermal, optical};
    m.c_meas = MatrixXd::Zero(4, 4);
    m.c_meas(3, 3) = std::sqrt(2.0 * kappa * p.eta_det);
    m.gamma_meas_mat = MatrixXd::Zero(4, 4);
    m.gamma_meas_mat(3, 3) = -std::sqrt(kappa * p.eta_det / 2.0);
    return m;
}

/// Mechanical mode after adiabatic elimination of the cavity, with the
/// backaction split into the X-measurement and Y-measurement channels.
///
/// Each optical channel diffuses the conjugate quadrature at rate gamma_qba and
/// carries an irreversible drift of magnitude gamma_qba on the same support;
/// the two drifts add up to a rotation that the Hamiltonian part cancels, so
/// the total drift is the bare damping -gamma_m/2.
inline GaussianModel build_adiabatic_model(const PhysParams &p) {
    const double gq = p.gamma_qba;
    GaussianModel m;
    m.a_ham = MatrixXd::Zero(2, 2);
    m.a_ham(0, 1) = gq;
    m.a_ham(1, 0) = -gq;

    Channel thermal{"thermal", MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2)};
    thermal.a_irr(0, 0) = thermal.a_irr(1, 1) = -p.gamma_m / 2.0;
    thermal.d(0, 0) = thermal.d(1, 1) = p.gamma_m * (p.n_th + 0.5);

    Channel opt_x{"optical_x", MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2)};
    opt_x.a_irr(1, 0) = gq;
    opt_x.d(1, 1) = gq;

    Channel opt_y{"optical_y", MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2)};
    opt_y.a_irr(0, 1) = -gq;
    opt_y.d(0, 0) = gq;

    m.channels = {thermal, opt_x, opt_y};
    m.c_meas = std::sqrt(4.0 * p.eta_det * gq) * MatrixXd::Identity(2, 2);
    m.gamma_meas_mat = MatrixXd::Zero(2, 2);
    return m;
}

/// Solves A V + V A^T + D = 0 by Kronecker vectorisation and dense LU with
/// iterative refinement.
inline CovMatrix lyapunov_steady_state(const GaussianModel &m) {
    const MatrixXd a = m.total_drift();
    const MatrixXd d = m.total_diffusion();
    if (!is_hurwitz(a)) {
        throw StabilityError("total drift matrix is not Hurwitz; no steady state exists");
    }
    const Eigen::Index n = a.rows();
    const MatrixXd eye = MatrixXd::Identity(n, n);
    MatrixXd k = MatrixXd::Zero(n * n, n * n);
    // vec(A V) = (I (x) A) vec(V), vec(V A^T) = (A (x) I) vec(V), column-major vec.
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            k.block(i * n, j * n, n, n) += eye(i, j) * a + a(i, j) * eye;
        }
    }
    Eigen::FullPivLU<MatrixXd> lu(k);
    VectorXd rhs = -Eigen::Map<const VectorXd>(d.data(), n * n);
    VectorXd x = lu.solve(rhs);
    auto residual_of = [&](const MatrixXd &v) { return (a * v + v * a.transpose() + d).norm(); };
    const double bound = 1e-10 * d.norm();
    for (int iter = 0; iter < 4; ++iter) {
        VectorXd r = rhs - k * x;
        x += lu.solve(r);
    }
    MatrixXd v = Eigen::Map<MatrixXd>(x.data(), n, n);
    v = 0.5 * (v + v.transpose()).eval();
    double res = residual_of(v);
    if (!(res < bound)) {
        throw NumericError(fmt::format("Lyapunov residual {} exceeds bound {}", res, bound));
    }
    return {v};
}

inline double lyapunov_residual(const GaussianModel &m, const CovMatrix &cov) {
    const MatrixXd a = m.total_drift();
    return (a * cov.v + cov.v * a.transpose() + m.total_diffusion()).norm();
}

/// Moore-Penrose inverse of a symmetric PSD matrix (diagonal matrices are inverted entrywise).
inline MatrixXd psd_pseudo_inverse(const MatrixXd &d) {
    const Eigen::Index n = d.rows();
    if (d.isDiagonal(0.0)) {
        MatrixXd out = MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (d(i, i) != 0.0) out(i, i) = 1.0 / d(i, i);
        }
        return out;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(d);
    const auto &w = es.eigenvalues();
    const double cut = std::max(1.0, w.cwiseAbs().maxCoeff()) * static_cast<double>(n) *
                       std::numeric_limits<double>::epsilon();
    VectorXd inv = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (w(i) > cut) inv(i) = 1.0 / w(i);
    }
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Throws ModelError unless a_irr maps into span(d), i.e. d d^+ a_irr = a_irr.
inline void check_channel_support(const Channel &ch) {
    MatrixXd proj = ch.d * psd_pseudo_inverse(ch.d) * ch.a_irr;
    double err = (proj - ch.a_irr).norm();
    if (err > 1e-12 * std::max(1.0, ch.a_irr.norm())) {
        throw ModelError(fmt::format(
            "channel '{}': irreversible drift leaves the support of its diffusion matrix (singular channel, "
            "mismatch {})",
            ch.label, err));
    }
}

struct ChannelRate {
    std::string label;
    double phi = 0;
    double pi = 0;
};

struct ChannelRates {
    std::vector<ChannelRate> channels;
    double phi_total = 0;
    double pi_total = 0;
};

/// Per-channel Wigner-entropy flux and production at covariance V and mean r.
///   phi_l = -Tr A_l - 2 Tr[A_l^T D_l^+ A_l V] - 2 r^T A_l^T D_l^+ A_l r
///   pi_l  = 2 Tr A_l + 2 Tr[A_l^T D_l^+ A_l V] + 2 r^T A_l^T D_l^+ A_l r + Tr[V^-1 D_l] / 2
inline ChannelRates channel_entropy_rates(const GaussianModel &m, const CovMatrix &cov, const VectorXd &r) {
    const Eigen::Index n = m.dim();
    if (cov.v.rows() != n || cov.v.cols() != n || r.size() != n) {
        throw ShapeError("covariance or mean has the wrong dimension for this model");
    }
    const MatrixXd v_inv = cov.v.inverse();
    ChannelRates out;
    for (const auto &ch : m.channels) {
        check_channel_support(ch);
        const MatrixXd q = ch.a_irr.transpose() * psd_pseudo_inverse(ch.d) * ch.a_irr;
        const double tr_a = ch.a_irr.trace();
        const double quad_v = 2.0 * (q * cov.v).trace();
        const double quad_r = 2.0 * r.dot(q * r);
        ChannelRate cr;
        cr.label = ch.label;
        cr.phi = -tr_a - quad_v - quad_r;
        cr.pi = 2.0 * tr_a + quad_v + quad_r + 0.5 * (v_inv * ch.d).trace();
        out.phi_total += cr.phi;
        out.pi_total += cr.pi;
        out.channels.push_back(cr);
    }
    return out;
}

inline ChannelRates channel_entropy_rates(const GaussianModel &m, const CovMatrix &cov) {
    return channel_entropy_rates(m, cov, VectorXd::Zero(m.dim()));
}

struct CheckRecord {
    std::string name;
    double value = 0;
    double reference = 0;
    double tolerance = 0;  ///< relative to |reference|, absolute when reference is 0
    bool pass = false;
};

inline CheckRecord make_check(std::string name, double value, double reference, double tolerance) {
    double scale = reference != 0.0 ? std::abs(reference) : 1.0;
    bool pass = std::isfinite(value) && std::abs(value - reference) <= tolerance * scale;
    return {std::move(name), value, reference, tolerance, pass};
}

struct ConsistencyReport {
    std::vector<CheckRecord> checks;
    bool all_pass() const {
        for (const auto &c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }
    const CheckRecord &at(const std::string &name) const {
        for (const auto &c : checks)
            if (c.name == name) return c;
        throw Error(fmt::format("no check named '{}'", name));
    }
};

/// Cross-validates the cavity-resolved model against the adiabatic one.
inline ConsistencyReport adiabatic_consistency_check(const PhysParams &p) {
    ConsistencyReport rep;
    auto d = derive_rates(p);

    // (a) mechanical marginal of the 4x4 steady state vs V_uc.
    auto full = build_optomech_model(p);
    rep.checks.push_back(make_check("full_model_hurwitz", is_hurwitz(full.total_drift()) ? 1.0 : 0.0, 1.0, 0.0));
    auto cov = lyapunov_steady_state(full);
    rep.checks.push_back(
        make_check("full_model_lyapunov_residual", lyapunov_residual(full, cov) / full.total_diffusion().norm(), 0.0,
                   1e-10));
    rep.checks.push_back(make_check("full_model_physical_covariance", is_physical(cov) ? 1.0 : 0.0, 1.0, 0.0));
    rep.checks.push_back(make_check("mechanical_marginal_x", cov.v(0, 0), d.v_uc, 0.02));
    rep.checks.push_back(make_check("mechanical_marginal_y", cov.v(1, 1), d.v_uc, 0.02));
    rep.checks.push_back(make_check("backaction_rate_from_coupling", 4.0 * *p.g * *p.g / *p.kappa, p.gamma_qba, 0.005));
    {
        auto full_rates = channel_entropy_rates(full, cov);
        double v_m = 0.5 * (cov.v(0, 0) + cov.v(1, 1));
        for (const auto &ch : full_rates.channels) {
            if (ch.label == "optical") {
                rep.checks.push_back(make_check("full_model_optical_flux", ch.phi, -4.0 * p.gamma_qba * v_m, 0.02));
            }
        }
        rep.checks.push_back(make_check("full_model_ness_antisymmetry",
                                        (full_rates.phi_total + full_rates.pi_total) / std::abs(full_rates.pi_total),
                                        0.0, 1e-9));
    }

    // (b) adiabatic channel sums vs the closed-form unconditional rates.
    auto adiabatic = build_adiabatic_model(p);
    CovMatrix iso{d.v_uc * MatrixXd::Identity(2, 2)};
    auto rates = channel_entropy_rates(adiabatic, iso);
    auto closed = unconditional_rates(p, d.v_uc);
    rep.checks.push_back(make_check("adiabatic_flux_sum", rates.phi_total, closed.phi_uc, 1e-9));
    rep.checks.push_back(make_check("adiabatic_production_sum", rates.pi_total, closed.pi_uc, 1e-9));
    for (const auto &ch : rates.channels) {
        if (ch.label == "optical_x" || ch.label == "optical_y") {
            rep.checks.push_back(make_check(ch.label + "_flux", ch.phi, -2.0 * d.v_uc * p.gamma_qba, 1e-12));
            rep.checks.push_back(make_check(ch.label + "_production", ch.pi,
                                            p.gamma_qba * (2.0 * d.v_uc + 1.0 / (2.0 * d.v_uc)), 1e-12));
        }
    }

    // (c) NESS antisymmetry at the adiabatic Lyapunov steady state.
    auto ness = lyapunov_steady_state(adiabatic);
    auto ness_rates = channel_entropy_rates(adiabatic, ness);
    rep.checks.push_back(make_check("ness_flux_production_antisymmetry",
                                    (ness_rates.phi_total + ness_rates.pi_total) / std::abs(ness_rates.pi_total), 0.0,
                                    1e-12));
    return rep;
}

}  // namespace omtherm
