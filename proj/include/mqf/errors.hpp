#pragma once

#include <stdexcept>
#include <string>

namespace mqf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/graph shape violations (inner dimensions, row counts, ...).
struct ShapeError : Error {
    using Error::Error;
};

// Bad call arguments or malformed configuration.
struct ArgumentError : Error {
    using Error::Error;
};

// Broken API contract (e.g. backward() on a non-scalar node).
struct ContractError : Error {
    using Error::Error;
};

// Malformed or inconsistent input data.
struct DataError : Error {
    using Error::Error;
};

// Numerical failure: domain violations, NaN loss, diverged training.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace mqf
