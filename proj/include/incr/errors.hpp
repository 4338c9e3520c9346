#pragma once
#include <stdexcept>

namespace incr {

// CLI exit code 2: the run could not start (bad config, unknown keys, bad flags).
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };

// CLI exit code 1: the run started and failed (bad data, unmet precondition).
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DomainError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace incr
