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

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "omtherm/dynamics.hpp"
#include "omtherm/errors.hpp"

// CSV conventions: fixed header line, ',' separator, '.' decimal point,
// 17 significant digits, '\n' line endings.

namespace omtherm::csv {

inline std::string format_number(double x) { return fmt::format("{:.17g}", x); }

/// Column-oriented table; every column must have the same length.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    void add(std::string name, std::vector<double> values) {
        header.push_back(std::move(name));
        columns.push_back(std::move(values));
    }
    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }

    const std::vector<double> &column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return columns[i];
        throw ShapeError(fmt::format("no column '{}'", name));
    }
};

inline std::string render(const Table &t) {
    for (const auto &c : t.columns) {
        if (c.size() != t.rows()) throw ShapeError("CSV columns have different lengths");
    }
    std::string out;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (i) out += ',';
        out += t.header[i];
    }
    out += '\n';
    fmt::memory_buffer buf;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        buf.clear();
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            if (c) buf.push_back(',');
            fmt::format_to(std::back_inserter(buf), "{:.17g}", t.columns[c][r]);
        }
        buf.push_back('\n');
        out.append(buf.data(), buf.size());
    }
    return out;
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(fmt::format("cannot open '{}' for writing", path.string()));
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw Error(fmt::format("write to '{}' failed", path.string()));
}

inline void write(const std::filesystem::path &path, const Table &t) { write_text(path, render(t)); }

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_number(std::string_view s) {
    double x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(fmt::format("not a number: '{}'", s));
    }
    return x;
}

inline Table read(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(fmt::format("cannot open '{}'", path.string()));
    Table t;
    std::string line;
    if (!std::getline(f, line)) throw ShapeError(fmt::format("'{}' is empty", path.string()));
    for (auto h : split(line)) t.header.emplace_back(h);
    t.columns.resize(t.header.size());
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != t.header.size()) {
            throw ShapeError(fmt::format("{}:{}: expected {} fields, got {}", path.string(), lineno, t.header.size(),
                                         cells.size()));
        }
        for (std::size_t i = 0; i < cells.size(); ++i) t.columns[i].push_back(parse_number(cells[i]));
    }
    return t;
}

inline constexpr std::string_view trajectory_header = "t,rx,ry,v,ix,iy";

/// One row per step k (the photocurrent belongs to [t_k, t_k+1)).
inline Table trajectory_table(const Trajectory &tr) {
    Table t;
    std::size_t n = tr.grid.n_steps;
    std::vector<double> time(n), rx(n), ry(n), v(n), ix(n), iy(n);
    for (std::size_t k = 0; k < n; ++k) {
        time[k] = tr.grid.time(k);
        rx[k] = tr.r[k][0];
        ry[k] = tr.r[k][1];
        v[k] = tr.v[k];
        ix[k] = tr.photocurrent[k][0];
        iy[k] = tr.photocurrent[k][1];
    }
    t.add("t", std::move(time));
    t.add("rx", std::move(rx));
    t.add("ry", std::move(ry));
    t.add("v", std::move(v));
    t.add("ix", std::move(ix));
    t.add("iy", std::move(iy));
    return t;
}

/// Measurement record as read back from a trajectory file.
struct Record {
    TimeGrid grid;
    std::vector<Vec2> photocurrent;  ///< grid.n_steps samples
    std::vector<double> v;           ///< grid.points() samples (last value repeated)
};

inline Record read_record(const std::filesystem::path &path) {
    auto t = read(path);
    std::string joined;
    for (std::size_t i = 0; i < t.header.size(); ++i) joined += (i ? "," : "") + t.header[i];
    if (joined != trajectory_header) {
        throw ShapeError(fmt::format("'{}' has header '{}', expected '{}'", path.string(), joined, trajectory_header));
    }
    const auto &time = t.column("t");
    if (time.size() < 2) throw ShapeError(fmt::format("'{}' needs at least two rows", path.string()));
    double dt = time[1] - time[0];
    for (std::size_t k = 1; k < time.size(); ++k) {
        double step = time[k] - time[k - 1];
        if (std::abs(step - dt) > 1e-9 * dt + 1e-15 * std::abs(time[k])) {
            throw GridError(fmt::format("'{}' is not uniformly sampled at row {}", path.string(), k + 1));
        }
    }
    Record rec;
    rec.grid = TimeGrid(time[0], dt, time.size());
    const auto &ix = t.column("ix");
    const auto &iy = t.column("iy");
    rec.photocurrent.resize(time.size());
    for (std::size_t k = 0; k < time.size(); ++k) rec.photocurrent[k] = {ix[k], iy[k]};
    rec.v = t.column("v");
    rec.v.push_back(rec.v.back());
    return rec;
}

}  // namespace omtherm::csv
