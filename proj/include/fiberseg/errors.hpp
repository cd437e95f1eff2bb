#pragma once

#include <stdexcept>
#include <string>

namespace fiberseg {

// Error categories map onto CLI exit codes: ConfigError -> 1,
// DataError -> 2, NumericalError -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// trk_io
struct TruncatedFile : DataError {
    using DataError::DataError;
};
struct BadHeader : DataError {
    using DataError::DataError;
};
struct NonFinitePoint : DataError {
    using DataError::DataError;
};
struct BadLabel : DataError {
    using DataError::DataError;
};
struct CountMismatch : DataError {
    using DataError::DataError;
};

// pruning
struct DegenerateFiber : DataError {
    using DataError::DataError;
};

// nn
struct DimensionMismatch : DataError {
    using DataError::DataError;
};
struct BadClassIndex : DataError {
    using DataError::DataError;
};
struct NonFiniteGradient : NumericalError {
    using NumericalError::NumericalError;
};
struct BadConfig : ConfigError {
    using ConfigError::ConfigError;
};

// harness
struct EmptySplit : ConfigError {
    using ConfigError::ConfigError;
};
struct EmptyInput : DataError {
    using DataError::DataError;
};
struct NoWhiteFibers : DataError {
    using DataError::DataError;
};
struct BadProtocolConfig : ConfigError {
    using ConfigError::ConfigError;
};

}  // namespace fiberseg
