#pragma once

#include <stdexcept>
#include <string>

namespace dticalib {

/// Raised when input data cannot be processed (bad measurements, degenerate
/// schemes, diverging training). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on malformed configuration or command-line usage (exit code 1).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dticalib
