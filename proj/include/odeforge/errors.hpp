#pragma once

#include <stdexcept>
#include <string>

namespace odeforge {

/// Base for every error raised by the library. The CLI maps each subclass
/// onto its own exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad or inconsistent configuration / arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, malformed or insufficient input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Model-file schema violations.
class SchemaError : public DataError {
public:
    using DataError::DataError;
};

/// Singular systems, escaping trajectories, non-finite values.
class NumericalError : public Error {
public:
    using Error::Error;
};

class SingularSystemError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Raised by integration when a trajectory leaves the divergence bound.
class EscapeError : public NumericalError {
public:
    EscapeError(const std::string& what, double escape_time)
        : NumericalError(what), escape_time_(escape_time) {}
    [[nodiscard]] double escape_time() const noexcept { return escape_time_; }

private:
    double escape_time_;
};

}  // namespace odeforge
