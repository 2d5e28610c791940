// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dmsc {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor shapes or axes.
class DimError : public Error {
public:
    explicit DimError(const std::string& msg) : Error("dimension error: " + msg) {}
};

/// Invalid configuration (hyperparameters, divisibility, ranges).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

/// NaN/Inf encountered, or gradient state misuse.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

/// Input sequence too short for the requested receptive field.
class SequenceError : public Error {
public:
    explicit SequenceError(const std::string& msg) : Error("sequence-length error: " + msg) {}
};

/// Malformed or truncated serialized data.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

/// Filesystem-level failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace dmsc
