#pragma once

#include <stdexcept>
#include <string>

namespace treegpt {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank mismatches. Message always names the offending shapes.
struct DimensionError : Error {
    using Error::Error;
};

// NaN/Inf produced by a forward op, or detected in gradients. Fail fast,
// naming the op that produced it.
struct NumericError : Error {
    using Error::Error;
};

// Invalid argument values (bad token id, empty mask, out-of-range cell, ...).
struct ValueError : Error {
    using Error::Error;
};

// File system / parse failures.
struct IoError : Error {
    using Error::Error;
};

// Bad run configuration: unknown keys, unparsable values, invalid combinations.
struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint container problems, kept distinct so callers can tell them apart.
struct CheckpointVersionError : Error {
    using Error::Error;
};
struct CheckpointTruncatedError : Error {
    using Error::Error;
};
struct CheckpointShapeError : Error {
    using Error::Error;
};

}  // namespace treegpt
