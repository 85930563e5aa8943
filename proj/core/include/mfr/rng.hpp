// mfr is Copyright(c) 2026 the mfr authors.
// The mfr source code is licensed under the Apache License, Version 2.0.
// SPDX: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace mfr {

/// PCG32 generator (O'Neill). Self-contained so that streams are identical
/// across platforms and standard libraries; every seeded pipeline stage keys
/// its own substreams off (seed, stream) pairs.
class Pcg32 {
public:
    Pcg32() { reseed(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL); }
    Pcg32(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

    void reseed(uint64_t seed, uint64_t stream = 0) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = uint32_t(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = uint32_t(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((~rot + 1u) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform double in [0, 1).
    double next_double() { return next_u32() * (1.0 / 4294967296.0); }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform int in [0, n).
    uint32_t next_below(uint32_t n) { return uint32_t((uint64_t(next_u32()) * n) >> 32); }

    /// Standard normal via Box-Muller (no cached spare: one draw consumes two
    /// uniforms, keeping stream consumption position-independent).
    double normal() {
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
};

}  // namespace mfr
