#pragma once

#include <stdexcept>
#include <string>

namespace chn {

// Malformed or inconsistent input data (files, CSV rows, checkpoints).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite math is required.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Violation of an object lifecycle contract (e.g. mutating a frozen model).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace chn
