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
#include <random>

#include <gtest/gtest.h>

#include "omtherm/fullmodel.hpp"

using namespace omtherm;

namespace {

PhysParams with_kappa(double kappa_hz) {
    auto p = reference_parameters();
    p.kappa = hz_to_rad(kappa_hz);
    p.g = std::sqrt(p.gamma_qba * *p.kappa / 4.0);
    return p;
}

MatrixXd random_sym_pd(std::mt19937_64 &rng, Eigen::Index n, double floor) {
    std::normal_distribution<double> z;
    MatrixXd b(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) b(i, j) = z(rng);
    return b * b.transpose() + floor * MatrixXd::Identity(n, n);
}

}  // namespace

TEST(optomech_model, matrix_layout) {
    auto p = reference_parameters();
    auto m = build_optomech_model(p);
    ASSERT_EQ(m.dim(), 4);
    ASSERT_EQ(m.a_ham(0, 1), *p.omega_m);
    ASSERT_EQ(m.a_ham(1, 0), -*p.omega_m);
    ASSERT_EQ(m.a_ham(1, 2), -2.0 * *p.g);
    ASSERT_EQ(m.a_ham(3, 0), -2.0 * *p.g);
    ASSERT_EQ(m.a_ham(0, 2), 0.0);
    ASSERT_EQ(m.a_ham(2, 0), 0.0);
    auto d = m.total_diffusion();
    ASSERT_DOUBLE_EQ(d(0, 0), p.gamma_m * (p.n_th + 0.5));
    ASSERT_DOUBLE_EQ(d(2, 2), *p.kappa / 2.0);
    auto a = m.total_drift();
    ASSERT_DOUBLE_EQ(a(0, 0), -p.gamma_m / 2.0);
    ASSERT_DOUBLE_EQ(a(3, 3), -*p.kappa / 2.0);
    ASSERT_TRUE(is_hurwitz(a));
}

TEST(optomech_model, needs_full_parameters) {
    auto p = reference_parameters();
    p.kappa.reset();
    ASSERT_THROW(build_optomech_model(p), ConfigError);
    ASSERT_THROW(adiabatic_consistency_check(p), ConfigError);
}

TEST(optomech_model, zero_coupling_decouples_the_modes) {
    PhysParams p = reference_parameters();
    p.g = 0.0;
    auto cov = lyapunov_steady_state(build_optomech_model(p));
    ASSERT_NEAR(cov.v(0, 0), p.n_th + 0.5, 1e-12 * p.n_th);
    ASSERT_NEAR(cov.v(1, 1), p.n_th + 0.5, 1e-12 * p.n_th);
    ASSERT_NEAR(cov.v(2, 2), 0.5, 1e-12);
    ASSERT_NEAR(cov.v(3, 3), 0.5, 1e-12);
    ASSERT_NEAR(cov.v.block(0, 2, 2, 2).norm(), 0.0, 1e-12);
    auto rates = channel_entropy_rates(build_optomech_model(p), cov);
    for (const auto &ch : rates.channels) {
        ASSERT_NEAR(ch.phi, 0.0, 1e-9) << ch.label;
        ASSERT_NEAR(ch.pi, 0.0, 1e-9) << ch.label;
    }
}

TEST(optomech_model, reference_marginal) {
    auto p = reference_parameters();
    auto cov = lyapunov_steady_state(build_optomech_model(p));
    ASSERT_NEAR(cov.v(0, 0), 33.15984973777624, 1e-8);
    ASSERT_NEAR(cov.v(1, 1), 33.159811412106606, 1e-8);
    ASSERT_NEAR(cov.v(3, 3), 0.5025419228712532, 1e-10);
    ASSERT_TRUE(is_physical(cov));
}

TEST(lyapunov, scales_with_diffusion) {
    auto m = build_optomech_model(reference_parameters());
    auto v1 = lyapunov_steady_state(m);
    for (auto &ch : m.channels) ch.d *= 3.0;
    auto v3 = lyapunov_steady_state(m);
    ASSERT_LT((v3.v - 3.0 * v1.v).norm(), 1e-10 * v1.v.norm());
}

TEST(lyapunov, residual_on_random_stable_models) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 50; ++trial) {
        GaussianModel m;
        m.a_ham = MatrixXd::Zero(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) m.a_ham(i, j) = z(rng);
        double shift = std::abs(Eigen::EigenSolver<MatrixXd>(m.a_ham, false).eigenvalues().real().maxCoeff()) + 0.5;
        m.channels = {{"damp", -shift * MatrixXd::Identity(4, 4), random_sym_pd(rng, 4, 0.1)}};
        auto cov = lyapunov_steady_state(m);
        ASSERT_LT(lyapunov_residual(m, cov), 1e-10 * m.total_diffusion().norm());
        ASSERT_LT((cov.v - cov.v.transpose()).norm(), 1e-14 * cov.v.norm());
    }
}

TEST(lyapunov, rejects_unstable_drift) {
    GaussianModel m;
    m.a_ham = MatrixXd::Zero(2, 2);
    m.channels = {{"gain", 0.1 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)}};
    ASSERT_THROW(lyapunov_steady_state(m), StabilityError);
    m.channels[0].a_irr.setZero();
    ASSERT_THROW(lyapunov_steady_state(m), StabilityError);
}

TEST(adiabatic_model, total_drift_is_bare_damping) {
    auto p = reference_parameters();
    auto m = build_adiabatic_model(p);
    ASSERT_LT((m.total_drift() + p.gamma_m / 2.0 * MatrixXd::Identity(2, 2)).norm(), 1e-12);
    auto cov = lyapunov_steady_state(m);
    double v_uc = derive_rates(p).v_uc;
    ASSERT_NEAR(cov.v(0, 0), v_uc, 1e-10 * v_uc);
    ASSERT_NEAR(cov.v(1, 1), v_uc, 1e-10 * v_uc);
    ASSERT_NEAR(cov.v(0, 1), 0.0, 1e-10);
}

TEST(adiabatic_model, channel_values) {
    auto p = reference_parameters();
    auto d = derive_rates(p);
    auto rates = channel_entropy_rates(build_adiabatic_model(p), {d.v_uc * MatrixXd::Identity(2, 2)});
    ASSERT_EQ(rates.channels.size(), 3u);
    for (const auto &ch : rates.channels) {
        if (ch.label == "thermal") continue;
        ASSERT_NEAR(ch.phi, -151312.32995542587, 1e-6) << ch.label;
        ASSERT_NEAR(ch.pi, 151346.1434782434, 1e-6) << ch.label;
    }
}

TEST(adiabatic_model, sum_rule_at_random_variance) {
    auto p = reference_parameters();
    auto m = build_adiabatic_model(p);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> v(0.5, 80.0);
    for (int i = 0; i < 100; ++i) {
        double x = v(rng);
        auto rates = channel_entropy_rates(m, {x * MatrixXd::Identity(2, 2)});
        auto closed = unconditional_rates(p, x);
        ASSERT_NEAR(rates.phi_total, closed.phi_uc, 1e-10 * (std::abs(closed.phi_uc) + p.gamma_m)) << x;
        ASSERT_NEAR(rates.pi_total, closed.pi_uc, 1e-10 * (std::abs(closed.pi_uc) + p.gamma_m)) << x;
    }
}

TEST(adiabatic_model, mean_terms_match_stochastic_rates) {
    auto p = reference_parameters();
    auto m = build_adiabatic_model(p);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 3.0);
    std::uniform_real_distribution<double> v(0.6, 40.0);
    for (int i = 0; i < 100; ++i) {
        GaussianState s{{z(rng), z(rng)}, v(rng)};
        VectorXd r(2);
        r << s.r[0], s.r[1];
        auto full = channel_entropy_rates(m, {s.v * MatrixXd::Identity(2, 2)}, r);
        auto sr = stochastic_rates(s, p);
        double scale = std::abs(sr.phi_c) + p.gamma_qba * theta_of(s);
        ASSERT_NEAR(full.phi_total, sr.phi_c, 1e-10 * scale);
        ASSERT_NEAR(full.pi_total - 4.0 * p.eta_det * p.gamma_qba * s.v, sr.pi_c, 1e-10 * (scale + std::abs(sr.pi_c)));
    }
}

TEST(adiabatic_model, thermal_equilibrium_is_reversible) {
    PhysParams p;
    p.gamma_m = 2.0;
    p.n_th = 4.0;
    p.gamma_qba = 0.0;
    auto m = build_adiabatic_model(p);
    m.channels.resize(1);
    auto rates = channel_entropy_rates(m, {4.5 * MatrixXd::Identity(2, 2)});
    ASSERT_NEAR(rates.phi_total, 0.0, 1e-14);
    ASSERT_NEAR(rates.pi_total, 0.0, 1e-14);
}

TEST(channel_support, singular_channel_rejected) {
    GaussianModel m;
    m.a_ham = MatrixXd::Zero(2, 2);
    MatrixXd d = MatrixXd::Zero(2, 2);
    d(1, 1) = 1.0;
    MatrixXd a = MatrixXd::Zero(2, 2);
    a(0, 0) = -1.0;
    m.channels = {{"bad", a, d}};
    ASSERT_THROW(channel_entropy_rates(m, {MatrixXd::Identity(2, 2)}), ModelError);
    ASSERT_THROW(check_channel_support(m.channels[0]), ModelError);
}

TEST(channel_support, pseudo_inverse_properties) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixXd b = random_sym_pd(rng, 4, 0.0);
        MatrixXd lowrank = b;
        lowrank.row(3).setZero();
        lowrank.col(3).setZero();
        MatrixXd pinv = psd_pseudo_inverse(lowrank);
        ASSERT_LT((lowrank * pinv * lowrank - lowrank).norm(), 1e-10 * lowrank.norm());
        ASSERT_LT((pinv * lowrank * pinv - pinv).norm(), 1e-10 * pinv.norm());
    }
    MatrixXd diag = MatrixXd::Zero(3, 3);
    diag(0, 0) = 2.0;
    diag(2, 2) = 4.0;
    MatrixXd pinv = psd_pseudo_inverse(diag);
    ASSERT_EQ(pinv(0, 0), 0.5);
    ASSERT_EQ(pinv(1, 1), 0.0);
    ASSERT_EQ(pinv(2, 2), 0.25);
}

TEST(channel_rates, ness_antisymmetry_full_model) {
    auto p = reference_parameters();
    auto m = build_optomech_model(p);
    auto rates = channel_entropy_rates(m, lyapunov_steady_state(m));
    ASSERT_NEAR(rates.phi_total + rates.pi_total, 0.0, 1e-9 * std::abs(rates.pi_total));
    ASSERT_GT(rates.pi_total, 0.0);
}

TEST(channel_rates, shape_errors) {
    auto m = build_adiabatic_model(reference_parameters());
    ASSERT_THROW(channel_entropy_rates(m, {MatrixXd::Identity(4, 4)}), ShapeError);
    ASSERT_THROW(channel_entropy_rates(m, {MatrixXd::Identity(2, 2)}, VectorXd::Zero(3)), ShapeError);
}

TEST(symplectic, physicality) {
    ASSERT_TRUE(is_physical({0.5 * MatrixXd::Identity(2, 2)}));
    ASSERT_FALSE(is_physical({0.4 * MatrixXd::Identity(2, 2)}));
    MatrixXd squeezed(2, 2);
    squeezed << 0.1, 0, 0, 2.5;
    ASSERT_TRUE(is_physical({squeezed}));
    squeezed(1, 1) = 2.0;
    ASSERT_FALSE(is_physical({squeezed}));
    ASSERT_FALSE(is_physical({MatrixXd::Identity(3, 3)}));
}

TEST(adiabatic_limit, marginal_approaches_v_uc_as_kappa_grows) {
    double v_uc = derive_rates(reference_parameters()).v_uc;
    double previous = 0.0;
    for (double kappa_hz : {18.5e6, 37e6, 74e6, 148e6}) {
        auto p = with_kappa(kappa_hz);
        auto cov = lyapunov_steady_state(build_optomech_model(p));
        double dev = std::abs(0.5 * (cov.v(0, 0) + cov.v(1, 1)) - v_uc) / v_uc;
        double trend = std::pow(*p.omega_m / *p.kappa, 2);
        ASSERT_GT(dev / trend, 1.0) << kappa_hz;
        ASSERT_LT(dev / trend, 3.0) << kappa_hz;
        if (previous > 0) {
            ASSERT_NEAR(previous / dev, 4.0, 0.1) << kappa_hz;
        }
        previous = dev;
    }
}

TEST(adiabatic_limit, fluxes_vanish_without_coupling) {
    auto p = reference_parameters();
    for (double scale : {1e-1, 1e-2, 1e-3}) {
        auto q = p;
        q.g = *p.g * scale;
        auto m = build_optomech_model(q);
        auto rates = channel_entropy_rates(m, lyapunov_steady_state(m));
        for (const auto &ch : rates.channels) {
            if (ch.label == "optical") {
                ASSERT_LT(std::abs(ch.phi), 4.0 * p.gamma_qba * 34.0 * scale * scale * 1.1);
            }
        }
    }
}

TEST(consistency_report, reference_parameters_pass) {
    auto rep = adiabatic_consistency_check(reference_parameters());
    for (const auto &c : rep.checks) EXPECT_TRUE(c.pass) << c.name << " value " << c.value << " ref " << c.reference;
    ASSERT_TRUE(rep.all_pass());
    ASSERT_NEAR(rep.at("mechanical_marginal_x").value, 33.1598, 1e-4);
    ASSERT_THROW(rep.at("nonexistent"), Error);
}

TEST(consistency_report, make_check_semantics) {
    ASSERT_TRUE(make_check("a", 1.01, 1.0, 0.02).pass);
    ASSERT_FALSE(make_check("a", 1.03, 1.0, 0.02).pass);
    ASSERT_TRUE(make_check("a", 1e-10, 0.0, 1e-9).pass);
    ASSERT_FALSE(make_check("a", NAN, 0.0, 1e9).pass);
    ASSERT_FALSE(ConsistencyReport{}.all_pass());
}
