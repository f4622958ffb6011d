// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <stdexcept>
#include <string>

namespace voxcal {

/// Base class for all voxcal errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad shapes, bad attribute values, unknown primitive ids.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable files, unwritable paths.
class IoError : public Error {
public:
    using Error::Error;
};

/// A required checkpoint / dataset artifact is absent. CLI exit code 3.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

/// NaN or Inf encountered where finite values are required. CLI exit code 4.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad command-line usage. CLI exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace voxcal
