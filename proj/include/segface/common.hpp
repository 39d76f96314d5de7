#pragma once

// Shared error types, RNG and small utilities used across the library.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace segface {

// Invalid input supplied by a caller (bad shape, bad label, bad config).
// CLI maps this to exit code 2.
struct InvalidInput : std::invalid_argument {
    explicit InvalidInput(const std::string& msg) : std::invalid_argument(msg) {}
};

// Training produced a non-finite loss. CLI maps this to exit code 3.
struct Divergence : std::runtime_error {
    explicit Divergence(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failure. CLI maps this to exit code 4.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG wrapper. All stochastic choices in the library go
// through one of these, seeded from config, so a fixed seed reproduces a
// run bit-for-bit on the same platform.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    // Uniform in [0, 1).
    float uniform() {
        return static_cast<float>((eng_() >> 11) * (1.0 / 9007199254740992.0));
    }
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; avoids distribution objects whose state complicates reseeding.
    float normal() {
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.28318530717958647692f * u2);
    }

    bool coin() { return (eng_() & 1u) != 0; }

    // Derive an independent stream; used to give each clip / stage its own seed.
    uint64_t fork() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

// FNV-1a, used for config and palette fingerprints in checkpoints/reports.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline std::string hex64(uint64_t v) {
    static const char* d = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = d[v & 0xf];
        v >>= 4;
    }
    return s;
}

inline int round_half_up(double x) {
    return static_cast<int>(std::floor(x + 0.5));
}

}  // namespace segface
