#pragma once

#include <stdexcept>
#include <string>

namespace ugac {

/// Shape or size mismatch between tensors.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input outside the mathematical domain of an operation (log of a
/// non-positive value, invalid distribution parameters, ...).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unreadable or inconsistent external data (files, datasets).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values or diverging computations detected at runtime.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Broken internal invariant (malformed graph, corrupted state).
class InternalError : public std::logic_error {
public:
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace ugac
