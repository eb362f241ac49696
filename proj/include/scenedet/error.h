#pragma once

#include <stdexcept>
#include <string>

namespace scenedet {

// Invalid configuration or shape constraint violation.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed input file; message carries the offending line where known.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scene synthesis could not satisfy placement constraints.
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace scenedet
