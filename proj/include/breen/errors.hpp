#pragma once

#include <stdexcept>
#include <string>

namespace breen {

// Error taxonomy maps onto CLI exit codes: usage/shape/contract problems -> 2,
// file problems -> 3, numerical blow-ups during training -> 4.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad shapes, strides that do not divide the grid, invalid configs, broken
// preconditions.
struct contract_error : error {
    using error::error;
};

struct geometry_error : contract_error {
    using contract_error::contract_error;
};

struct config_error : contract_error {
    using contract_error::contract_error;
};

// Missing files, short reads, bad magic/version/checksum.
struct io_error : error {
    using error::error;
};

struct format_error : io_error {
    using io_error::io_error;
};

// First NaN seen in a loss component during training.
struct nan_error : error {
    using error::error;
};

}  // namespace breen
