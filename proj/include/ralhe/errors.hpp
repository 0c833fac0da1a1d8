// Copyright (c) the ralhe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ralhe {

/// Base class for all codec errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input container (PLY header problems, missing properties).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Structurally valid input with invalid payload values (NaN, zero quaternion).
class DataError : public Error {
public:
    using Error::Error;
};

/// Corrupt, truncated or inconsistent coded stream.
class BitstreamError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (k > L+1, bad flag combinations).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Mismatched tensor/list dimensions between aligned structures.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Optimization failure (divergence after retry).
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Voxel-set disagreement between streams/models that must share geometry.
class GeometryError : public Error {
public:
    using Error::Error;
};

} // namespace ralhe
