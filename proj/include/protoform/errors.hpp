#pragma once

#include <stdexcept>
#include <string>

namespace protoform {

// Caller broke a documented precondition (dimension mismatch, bad label, ...).
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Input is outside the mathematical domain of the operation (zero-norm vector,
// non-positive scale, ...).
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

// A truncated distribution whose mass on [-1, 1] is below the representable
// threshold; evaluating it would divide by (numerical) zero.
class DegenerateDistribution : public DomainError {
public:
    explicit DegenerateDistribution(const std::string& what) : DomainError(what) {}
};

// Inconsistent component wiring: empty class, mixed formulations in one bank,
// single-class bank for the separation loss, ...
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value produced where the math guarantees a finite one. Carries
// the parameter path that went bad (e.g. "bank[3].raw_sigma").
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::string path = {})
        : std::runtime_error(path.empty() ? what : what + " at " + path),
          parameter_path(std::move(path)) {}
    std::string parameter_path;
};

// Malformed file. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::uint64_t byte_offset;
};

}  // namespace protoform
