#pragma once

#include <stdexcept>
#include <string>

namespace ssldg {

// A documented precondition of an operation was violated by the caller.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Tensor/image shape mismatch between arguments.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed file content (PGM headers, tensor records, manifests).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint or dataset could not be restored (missing/incompatible pieces).
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ssldg
