#pragma once

#include <stdexcept>
#include <string>

namespace mixforge {

/// Base class for every error raised by the library. The `kind()` string is
/// stable and machine-readable; the CLI maps it into error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Caller handed us invalid data (bad shapes, out-of-range ids, off-simplex labels).
class InputError : public Error {
public:
    explicit InputError(const std::string& m) : Error("input", m) {}
};

/// A configuration file or parameter set is invalid or inconsistent.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

/// File IO failed or a file did not match its expected format.
class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("io", m) {}
};

/// A checkpoint or data file is damaged or truncated.
class CorruptFileError : public Error {
public:
    explicit CorruptFileError(const std::string& m) : Error("corrupt_file", m) {}
};

/// A required prior artifact (e.g. a teacher checkpoint) is missing.
class DependencyError : public Error {
public:
    explicit DependencyError(const std::string& m) : Error("dependency", m) {}
};

/// The model does not expose the structure an operation needs
/// (e.g. CAM extraction on a network without a GAP + linear head).
class UnsupportedArchitectureError : public Error {
public:
    explicit UnsupportedArchitectureError(const std::string& m)
        : Error("unsupported_architecture", m) {}
};

/// Training produced non-finite losses repeatedly; diagnostics were dumped.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& m) : Error("divergence", m) {}
};

/// An internal invariant was violated (a bug, not a user error).
class InternalError : public Error {
public:
    explicit InternalError(const std::string& m) : Error("internal", m) {}
};

}  // namespace mixforge
