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

#include <stdexcept>
#include <string>

namespace omtherm {

/// Root of every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A required configuration key is missing, duplicated or unparsable.
struct ConfigError : Error {
    using Error::Error;
};

/// A supplied value lies outside its admissible range.
struct ValidationError : Error {
    using Error::Error;
};

/// Non-finite input or result.
struct NumericError : Error {
    using Error::Error;
};

/// Argument outside the mathematical domain of a function (e.g. a non-positive variance).
struct DomainError : Error {
    using Error::Error;
};

/// Time grid violates the explicit-scheme stability guard or is malformed.
struct GridError : Error {
    using Error::Error;
};

/// Sequence lengths or grids disagree.
struct ShapeError : Error {
    using Error::Error;
};

/// Not enough samples for the requested statistic.
struct StatisticsError : Error {
    using Error::Error;
};

/// Retrodiction is unavailable for these parameters (lambda <= 0 or no measurement).
struct ParameterRegimeError : Error {
    using Error::Error;
};

/// The steady-state tail used for variance reconstruction is not stationary.
struct ReconstructionError : Error {
    using Error::Error;
};

/// Drift matrix is not Hurwitz.
struct StabilityError : Error {
    using Error::Error;
};

/// Inconsistent Gaussian model (e.g. irreversible drift outside the diffusion support).
struct ModelError : Error {
    using Error::Error;
};

/// Requested output needs a pipeline stage that was not run.
struct MissingDataError : Error {
    using Error::Error;
};

/// Wraps a failure with the name of the pipeline stage that raised it.
struct StageError : Error {
    StageError(std::string stage, const std::string &what)
        : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string &stage() const { return stage_; }

   private:
    std::string stage_;
};

}  // namespace omtherm
