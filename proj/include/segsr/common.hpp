#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace segsr {

// All recoverable failures (bad shapes, bad files, bad config values) are
// reported as segsr::Error. The C API layer translates them into status codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// FNV-1a over raw bytes; used for frozen-weight invariance checks.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace segsr
