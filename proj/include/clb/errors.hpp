#pragma once

#include <stdexcept>
#include <string>

namespace clb {

// Error taxonomy used across the engine. Each maps to a distinct CLI
// exit code (see README).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed bytes or files (bad magic, truncation, version mismatch).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stream/strategy mismatch, e.g. a task-routed strategy on a stream
// without task labels.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite arithmetic is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace clb
