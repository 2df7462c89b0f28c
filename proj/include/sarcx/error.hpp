#pragma once

#include <stdexcept>
#include <string>

namespace sarcx {

// Error kinds map onto CLI exit codes: usage=1, data=2, backend=3.
enum class ErrorKind { usage = 1, data = 2, backend = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

// Bad invocation: contract violations, incompatible shapes/configs.
class UsageError : public Error {
public:
    explicit UsageError(std::string message) : Error(ErrorKind::usage, std::move(message)) {}
};

// Malformed or missing input data.
class DataError : public Error {
public:
    explicit DataError(std::string message) : Error(ErrorKind::data, std::move(message)) {}
};

// A pluggable backend (knowledge service, vision service, ...) failed.
class BackendError : public Error {
public:
    explicit BackendError(std::string message) : Error(ErrorKind::backend, std::move(message)) {}
};

} // namespace sarcx
