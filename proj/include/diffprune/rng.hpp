// Copyright (c) 2026 the diffprune authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace diffprune {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Combines a seed with stream tags into a fresh 64-bit seed.
inline uint64_t seed_stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
    uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ull);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

/// Deterministic random source. All distributions are implemented by hand on
/// top of std::mt19937_64 so that draws are bit-identical across platforms
/// and standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1]; safe as a log() argument.
    double uniform_pos() { return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53; }

    /// Standard normal via Box-Muller. Stateless beyond the engine: both
    /// uniforms are consumed per draw and no spare is cached.
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Uniform integer in [lo, hi] inclusive. Modulo bias is negligible for
    /// the range sizes used here (hi - lo << 2^64).
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    Rng fork(uint64_t tag) { return Rng(splitmix64(eng_() ^ splitmix64(tag))); }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (is.fail()) throw std::runtime_error("Rng: malformed state string");
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace diffprune
