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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "omtherm/csv.hpp"
#include "omtherm/dynamics.hpp"
#include "omtherm/errors.hpp"
#include "omtherm/estimation.hpp"
#include "omtherm/model.hpp"

// Config files are flat `key = value` lines; '#' starts a comment.

namespace omtherm {

inline std::string_view trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> parse_key_values(std::string_view text, std::string_view origin = "config") {
    std::map<std::string, std::string> out;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        std::string_view line = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
        pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
        }
        auto key = std::string(trim(line.substr(0, eq)));
        auto value = std::string(trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
        if (!out.emplace(key, value).second) {
            throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, lineno, key));
        }
    }
    return out;
}

inline std::map<std::string, std::string> read_key_values(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

struct ExperimentConfig {
    PhysParams params = reference_parameters();
    double dt = 1e-7;
    double t_final = 3e-3;
    std::size_t n_traj = 3600;
    std::uint64_t master_seed = 20201;
    std::size_t decimation = 10;
    std::size_t n_display = 10;
    std::size_t export_trajectories = 10;
    std::size_t threads = 0;  ///< 0 selects the hardware concurrency
    ReconstructionMode mode = ReconstructionMode::exact;
    double tail_fraction = 0.2;
    std::filesystem::path output_dir = "out";
    bool run_variance = true;
    bool run_thermo = true;
    bool run_fullmodel = true;

    TimeGrid grid() const { return TimeGrid::from_horizon(dt, t_final); }
    std::size_t workers() const { return threads == 0 ? default_worker_count() : threads; }
};

inline const std::set<std::string> &physics_keys() {
    static const std::set<std::string> keys{
        "gamma_m", "gamma_m_hz", "n_th",    "gamma_qba", "gamma_qba_hz", "eta_det", "omega_m",
        "omega_m_hz", "kappa", "kappa_hz", "g",        "g_hz",         "delta",   "delta_hz"};
    return keys;
}

namespace detail {

inline std::uint64_t parse_count(std::string_view key, const std::string &s) {
    std::uint64_t x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(fmt::format("'{}' must be a non-negative integer, got '{}'", key, s));
    }
    return x;
}

inline double parse_real(std::string_view key, const std::string &s) {
    try {
        return csv::parse_number(s);
    } catch (const ConfigError &) {
        throw ConfigError(fmt::format("'{}' must be a number, got '{}'", key, s));
    }
}

}  // namespace detail

/// Validates an experiment configuration (grid guard, counts, fractions).
inline void validate(const ExperimentConfig &c) {
    validate(c.params);
    auto grid = c.grid();
    check_stability(grid, c.params);
    if (c.n_traj < 1) throw ValidationError("n_traj must be >= 1");
    if (c.decimation < 1) throw ValidationError("decimation must be >= 1");
    if (!(c.tail_fraction > 0 && c.tail_fraction <= 1)) {
        throw ValidationError(fmt::format("tail_fraction must lie in (0,1], got {}", c.tail_fraction));
    }
    if (c.n_traj > std::numeric_limits<std::uint32_t>::max()) {
        throw ValidationError("n_traj exceeds the trajectory id range");
    }
}

/// Builds a configuration from parsed key-values; keys not given keep defaults.
inline ExperimentConfig make_config(const std::map<std::string, std::string> &kv) {
    ExperimentConfig c;
    std::map<std::string, double> phys;
    bool any_phys = false;
    for (const auto &[key, value] : kv) {
        if (physics_keys().count(key)) {
            phys[key] = detail::parse_real(key, value);
            any_phys = true;
        } else if (key == "dt") {
            c.dt = detail::parse_real(key, value);
        } else if (key == "t_final") {
            c.t_final = detail::parse_real(key, value);
        } else if (key == "n_traj") {
            c.n_traj = detail::parse_count(key, value);
        } else if (key == "master_seed") {
            c.master_seed = detail::parse_count(key, value);
        } else if (key == "decimation") {
            c.decimation = detail::parse_count(key, value);
        } else if (key == "n_display") {
            c.n_display = detail::parse_count(key, value);
        } else if (key == "export_trajectories") {
            c.export_trajectories = detail::parse_count(key, value);
        } else if (key == "threads") {
            c.threads = detail::parse_count(key, value);
        } else if (key == "mode") {
            c.mode = parse_mode(value);
        } else if (key == "tail_fraction") {
            c.tail_fraction = detail::parse_real(key, value);
        } else if (key == "output_dir") {
            c.output_dir = value;
        } else if (key == "pipelines") {
            c.run_variance = c.run_thermo = c.run_fullmodel = false;
            for (auto item : csv::split(value)) {
                auto name = trim(item);
                if (name == "variance") c.run_variance = true;
                else if (name == "thermo") c.run_thermo = true;
                else if (name == "fullmodel") c.run_fullmodel = true;
                else throw ConfigError(fmt::format("unknown pipeline '{}'", name));
            }
        } else {
            throw ConfigError(fmt::format("unknown configuration key '{}'", key));
        }
    }
    if (any_phys) c.params = validate_params(phys);
    return c;
}

/// Key-value echo of a configuration (used for the run manifest).
inline std::map<std::string, std::string> config_to_map(const ExperimentConfig &c) {
    std::map<std::string, std::string> m;
    for (const auto &[k, v] : params_to_map(c.params)) m[k] = csv::format_number(v);
    m["dt"] = csv::format_number(c.dt);
    m["t_final"] = csv::format_number(c.t_final);
    m["n_traj"] = std::to_string(c.n_traj);
    m["master_seed"] = std::to_string(c.master_seed);
    m["decimation"] = std::to_string(c.decimation);
    m["n_display"] = std::to_string(c.n_display);
    m["export_trajectories"] = std::to_string(c.export_trajectories);
    m["mode"] = std::string(to_string(c.mode));
    m["tail_fraction"] = csv::format_number(c.tail_fraction);
    m["output_dir"] = c.output_dir.string();
    std::string pipelines;
    auto append = [&](bool on, const char *name) {
        if (!on) return;
        if (!pipelines.empty()) pipelines += ',';
        pipelines += name;
    };
    append(c.run_variance, "variance");
    append(c.run_thermo, "thermo");
    append(c.run_fullmodel, "fullmodel");
    m["pipelines"] = pipelines;
    return m;
}

}  // namespace omtherm
