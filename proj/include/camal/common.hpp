#pragma once

#include <stdexcept>
#include <string>

namespace camal {

// Error taxonomy. The CLI maps these onto exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4, anything else -> 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, bad CLI usage, schema violations.
struct ConfigError : Error {
    using Error::Error;
};

// Problems with input data: missing pairs, degenerate masks, bad formats.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Contract violations between library components.
struct ShapeError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
// A gradient was requested along a path that does not exist (e.g. detached
// feature maps).
struct LinkageError : Error {
    using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

}  // namespace camal
