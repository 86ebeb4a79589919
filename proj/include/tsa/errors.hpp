#pragma once

#include <stdexcept>

namespace tsa {

// Error categories; the CLI maps them to exit codes:
// ValidationError -> 1, ConfigError -> 2, DataError -> 3, MissingEntityError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MissingEntityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tsa
