#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace fragvqa {

// Contract violations (bad shapes, invalid flags, out-of-range knobs).
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerically undefined results (zero-variance correlation, empty pair sets).
struct UndefinedValue : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing or malformed files, corpora, checkpoints.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Warning sink. Defaults to stderr; tests may capture.
void emit_warning(const std::string& msg);
void set_warning_handler(std::function<void(const std::string&)> h);

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

// FNV-1a, used for config fingerprints and name-salted parameter seeds.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace fragvqa
