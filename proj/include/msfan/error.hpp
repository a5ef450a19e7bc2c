#pragma once

#include <stdexcept>
#include <string>

namespace msfan {

// Status codes shared with the C API and the CLI exit codes.
enum class Status : int {
    ok = 0,
    internal = 1,
    config = 2,
    data = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(Status code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Status code() const noexcept { return code_; }

private:
    Status code_;
};

// Invalid configuration values or combinations.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(Status::config, msg) {}
};

// Malformed or inconsistent dataset/checkpoint content.
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(Status::data, msg) {}
};

// Non-finite or degenerate numeric state (zero-norm inputs, NaN gradients).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(Status::numeric, msg) {}
};

// Driver-side sequencing bugs: stale clusterings, missing support sets.
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(Status::internal, msg) {}
};

// Shape mismatches between matrices/vectors.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(Status::internal, msg) {}
};

} // namespace msfan
