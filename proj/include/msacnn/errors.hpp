#pragma once

#include <stdexcept>
#include <string>

namespace msacnn {

// Invalid configuration: bad model/filter/plan settings, mismatched shapes
// at construction time.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data: files, labels, runtime shapes.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse by the caller (non-scalar loss, mismatched vector lengths, ...).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Violated internal invariant; maps to exit code 2 in the CLI.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace msacnn
