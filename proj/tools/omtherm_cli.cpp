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

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "omtherm/experiment.hpp"

namespace {

using namespace omtherm;

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trajectories;
    std::optional<double> dt;
    std::optional<double> t_final;
    std::optional<std::string> out;
    std::optional<std::string> mode;
    std::optional<std::size_t> threads;
    std::optional<std::size_t> decimation;
    std::optional<std::size_t> export_count;
};

void add_common(CLI::App *cmd, Overrides &o) {
    cmd->add_option("--config", o.config_path, "key = value configuration file");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--trajectories", o.trajectories, "ensemble size");
    cmd->add_option("--dt", o.dt, "time step in seconds");
    cmd->add_option("--t-final", o.t_final, "horizon in seconds");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--mode", o.mode, "reconstruction mode: exact or paper-approx");
    cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
    cmd->add_option("--decimation", o.decimation, "output stride in steps");
    cmd->add_option("--export", o.export_count, "full-resolution trajectories to write");
}

ExperimentConfig load(const Overrides &o) {
    ExperimentConfig c;
    if (!o.config_path.empty()) c = make_config(read_key_values(o.config_path));
    if (o.seed) c.master_seed = *o.seed;
    if (o.trajectories) c.n_traj = *o.trajectories;
    if (o.dt) c.dt = *o.dt;
    if (o.t_final) c.t_final = *o.t_final;
    if (o.out) c.output_dir = *o.out;
    if (o.mode) c.mode = parse_mode(*o.mode);
    if (o.threads) c.threads = *o.threads;
    if (o.decimation) c.decimation = *o.decimation;
    if (o.export_count) c.export_trajectories = *o.export_count;
    return c;
}

void print_checks(const ExperimentResults &r) {
    auto show = [](const CheckRecord &c) {
        fmt::print("  [{}] {} = {:.6g} (reference {:.6g}, tolerance {:.3g})\n", c.pass ? "pass" : "FAIL", c.name,
                   c.value, c.reference, c.tolerance);
    };
    if (r.fullmodel)
        for (const auto &c : r.fullmodel->checks) show(c);
    for (const auto &c : r.invariants) show(c);
}

int run(ExperimentConfig cfg, bool variance, bool thermo, bool fullmodel, bool strict) {
    cfg.run_variance = variance;
    cfg.run_thermo = thermo;
    cfg.run_fullmodel = fullmodel;
    auto sum = run_experiment(cfg);
    print_checks(sum.results);
    fmt::print("wrote {} files to {} in {:.2f} s; {} check(s) failed\n", sum.files.size(), cfg.output_dir.string(),
               sum.wall_time_s, sum.checks_failed);
    return strict && sum.checks_failed ? 3 : 0;
}

int reconstruct_files(const ExperimentConfig &cfg, const std::filesystem::path &input) {
    std::vector<std::filesystem::path> files;
    auto dir = std::filesystem::is_directory(input / "trajectories") ? input / "trajectories" : input;
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("traj_") && name.ends_with(".csv")) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error(fmt::format("no traj_*.csv files in '{}'", dir.string()));
    std::vector<csv::Record> records;
    for (const auto &f : files) records.push_back(csv::read_record(f));
    auto rr = reconstruct_from_records(records, cfg.params, cfg.decimation, cfg.mode, cfg.tail_fraction);
    csv::write(cfg.output_dir / "reconstruction.csv", reconstruction_table(rr.variance, rr.reconstruction));
    csv::write(cfg.output_dir / "variance.csv", variance_table(rr.variance, rr.reconstruction, rr.v_truth));
    fmt::print("reconstructed from {} records: v_ss estimate {:.6g} ({} mode)\n", records.size(),
               rr.reconstruction.v_ss_est, to_string(cfg.mode));
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Conditional Gaussian resonator: trajectories, retrodiction and entropy rates"};
    app.require_subcommand(1);
    Overrides o;
    bool strict = false;
    std::string input;

    auto *simulate = app.add_subcommand("simulate", "simulate an ensemble and export trajectories");
    auto *reconstruct = app.add_subcommand("reconstruct", "reconstruct V(t) by prediction and retrodiction");
    auto *thermo = app.add_subcommand("thermo", "entropy flux, production and information rates");
    auto *fullmodel = app.add_subcommand("check-fullmodel", "cavity-resolved vs adiabatic model cross-check");
    auto *all = app.add_subcommand("all", "every pipeline");
    for (auto *cmd : {simulate, reconstruct, thermo, fullmodel, all}) {
        add_common(cmd, o);
        cmd->add_flag("--strict", strict, "exit with status 3 when a check fails");
    }
    reconstruct->add_option("--input", input, "directory with traj_*.csv files");

    CLI11_PARSE(app, argc, argv);

    const char *stage = "config";
    try {
        auto cfg = load(o);
        stage = app.get_subcommands().front()->get_name().c_str();
        if (simulate->parsed()) return run(cfg, false, false, false, strict);
        if (reconstruct->parsed()) {
            if (!input.empty()) return reconstruct_files(cfg, input);
            return run(cfg, true, false, false, strict);
        }
        if (thermo->parsed()) return run(cfg, false, true, false, strict);
        if (fullmodel->parsed()) return run(cfg, false, false, true, strict);
        return run(cfg, true, true, true, strict);
    } catch (const StageError &e) {
        std::cerr << "error in stage " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error in stage " << stage << ": " << e.what() << "\n";
        return 2;
    }
}
