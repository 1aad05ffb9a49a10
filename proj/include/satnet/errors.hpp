#pragma once

#include <stdexcept>
#include <string>

namespace satnet {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor rank/shape mismatches. The message always carries the offending shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid user-supplied configuration (rates out of range, unknown variant, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Violated API precondition (non-scalar loss, wrong model variant, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Problems with datasets on disk (missing root, empty class directory, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical failure during training (NaN/Inf loss). Carries a diagnostic dump.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace satnet
