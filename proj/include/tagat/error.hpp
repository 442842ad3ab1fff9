#pragma once

#include <stdexcept>
#include <string>

namespace tagat {

// Error categories used across the library. All derive from std::runtime_error
// so callers can catch coarsely or by kind.

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Undecodable or unsupported image/file content.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input pair dimensions disagree (inputs are assumed pre-registered).
struct RegistrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (losses, attention inputs).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint magic/version/fingerprint mismatch.
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace tagat
