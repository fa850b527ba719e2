#pragma once

#include <stdexcept>
#include <string>

namespace c3d {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that are invalid or do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed, truncated or mismatched binary files.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Numeric breakdown, e.g. a loss that turned NaN during training.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace c3d
