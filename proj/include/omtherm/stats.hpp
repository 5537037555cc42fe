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

#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "omtherm/errors.hpp"

namespace omtherm {

/// Pairwise (cascade) sum; the association order depends only on the length.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0;
        for (double x : xs) s += x;
        return s;
    }
    std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

/// Running mean and centred second moment of `quantities` series of `points` samples each.
class SeriesMoments {
   public:
    SeriesMoments() = default;
    SeriesMoments(std::size_t quantities, std::size_t points)
        : quantities_(quantities), points_(points), mean_(quantities * points, 0.0), m2_(quantities * points, 0.0) {}

    /// Welford update; every (quantity, point) gets exactly one sample per realisation.
    void add(std::size_t quantity, std::size_t point, double x) {
        auto i = quantity * points_ + point;
        double n = static_cast<double>(count_ + 1);
        double delta = x - mean_[i];
        mean_[i] += delta / n;
        m2_[i] += delta * (x - mean_[i]);
    }
    /// Counts one more realisation; call once per trajectory after its samples are added.
    void finish_sample() { ++count_; }

    /// Pairwise (Chan) combination of two disjoint sets of realisations.
    void merge(const SeriesMoments &o) {
        if (o.quantities_ != quantities_ || o.points_ != points_) {
            throw ShapeError("cannot merge moment accumulators of different shape");
        }
        if (o.count_ == 0) return;
        if (count_ == 0) {
            *this = o;
            return;
        }
        double na = static_cast<double>(count_), nb = static_cast<double>(o.count_), n = na + nb;
        for (std::size_t i = 0; i < mean_.size(); ++i) {
            double delta = o.mean_[i] - mean_[i];
            mean_[i] += delta * (nb / n);
            m2_[i] += o.m2_[i] + delta * delta * (na * nb / n);
        }
        count_ += o.count_;
    }

    std::size_t count() const { return count_; }
    std::size_t points() const { return points_; }
    std::size_t quantities() const { return quantities_; }

    double mean(std::size_t quantity, std::size_t point) const { return mean_[quantity * points_ + point]; }
    /// Unbiased sample variance (mean subtracted).
    double variance(std::size_t quantity, std::size_t point) const {
        require_two();
        double v = m2_[quantity * points_ + point] / static_cast<double>(count_ - 1);
        return v < 0 ? 0.0 : v;
    }
    double stderr_of_mean(std::size_t quantity, std::size_t point) const {
        return std::sqrt(variance(quantity, point) / static_cast<double>(count_));
    }

   private:
    void require_two() const {
        if (count_ < 2) {
            throw StatisticsError(fmt::format("need at least 2 samples, have {}", count_));
        }
    }

    std::size_t quantities_ = 0;
    std::size_t points_ = 0;
    std::size_t count_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

/// Reduces partial accumulators with a balanced binary tree over their index order.
template <class T>
T pairwise_merge(std::vector<T> parts) {
    if (parts.empty()) {
        throw StatisticsError("nothing to reduce");
    }
    std::size_t n = parts.size();
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t i = 0; i + width < n; i += 2 * width) {
            parts[i].merge(parts[i + width]);
        }
    }
    return std::move(parts[0]);
}

inline std::size_t default_worker_count() {
    auto n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

/// Runs fn(job) for job in [0, jobs) on `workers` threads. Jobs are claimed
/// from a shared counter; results must be written to job-indexed slots so the
/// outcome does not depend on scheduling. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t jobs, std::size_t workers, Fn &&fn) {
    if (workers <= 1 || jobs <= 1) {
        for (std::size_t j = 0; j < jobs; ++j) fn(j);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (;;) {
            std::size_t j = next.fetch_add(1);
            if (j >= jobs) return;
            try {
                fn(j);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(jobs);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    std::size_t n = workers < jobs ? workers : jobs;
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace omtherm
