#pragma once

#include <stdexcept>
#include <string>

namespace gseunet {

// Base class for all library errors. Subclasses map onto the CLI exit-code
// contract: usage/config -> 1, data/io/format -> 2, numeric -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatch; message names the offending dimension.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration (divisibility, bad hyperparameter, even kernel, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Bad dataset content (out-of-range labels, mismatched pair dimensions, ...).
struct DataError : Error {
    using Error::Error;
};

// API misuse (backward on a non-scalar, evaluating an empty sample set, ...).
struct UsageError : Error {
    using Error::Error;
};

// Filesystem-level failure (missing file, unreadable, write failure).
struct IoError : Error {
    using Error::Error;
};

// A file exists but its content cannot be decoded (PNG depth, checkpoint
// magic/version/truncation, inconsistent shapes).
struct FormatError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required (exploded loss/gradient).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace gseunet
