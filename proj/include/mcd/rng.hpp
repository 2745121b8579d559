#pragma once

// Counter-based random numbers (Philox4x64-10). Every draw is a pure
// function of (seed, stream label, counter), so Monte Carlo runs are
// bit-reproducible regardless of threading or evaluation order.
//
// The block function matches numpy.random.Philox for the same key and
// counter words (numpy bumps the counter before its first block).

#include <array>
#include <cstdint>

#include "mcd/stats.hpp"

namespace mcd {

namespace detail {

inline void philox_mulhilo(std::uint64_t a, std::uint64_t b,
                           std::uint64_t& hi, std::uint64_t& lo) {
    const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(p >> 64);
    lo = static_cast<std::uint64_t>(p);
}

} // namespace detail

/// One Philox4x64-10 block: 256 counter bits, 128 key bits -> 4 uint64.
inline std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> ctr,
                                               std::array<std::uint64_t, 2> key) {
    constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t M1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t W1 = 0xBB67AE8584CAA73Bull;
    for (int round = 0; round < 10; ++round) {
        std::uint64_t hi0, lo0, hi1, lo1;
        detail::philox_mulhilo(M0, ctr[0], hi0, lo0);
        detail::philox_mulhilo(M1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += W0;
        key[1] += W1;
    }
    return ctr;
}

/// Fixed stream labels; all randomness in the project flows from one
/// top-level seed split by these.
enum class Stream : std::uint64_t {
    source_build = 1,
    corpus = 2,
    model_init = 3,
    pretrain_data = 4,
    pretrain_time = 5,
    pretrain_mask = 6,
    distill_data = 7,
    distill_time = 8,
    distill_noise = 9,
    sampler = 10,
    verify_epsilon = 11,
    test_scratch = 12,
};

/// Handle on one stream: draws are indexed by a 192-bit counter
/// (c0,c1,c2), typically (item, position, slot).
class RngStream {
public:
    RngStream(std::uint64_t seed, Stream stream)
        : key_{seed, static_cast<std::uint64_t>(stream)} {}
    RngStream(std::uint64_t seed, std::uint64_t raw_label) : key_{seed, raw_label} {}

    std::uint64_t raw(std::uint64_t c0, std::uint64_t c1 = 0, std::uint64_t c2 = 0,
                      unsigned lane = 0) const {
        return philox4x64({c0, c1, c2, 0}, key_)[lane & 3u];
    }

    /// Uniform in [0,1), 53 mantissa bits.
    double uniform(std::uint64_t c0, std::uint64_t c1 = 0, std::uint64_t c2 = 0,
                   unsigned lane = 0) const {
        return double(raw(c0, c1, c2, lane) >> 11) * 0x1.0p-53;
    }

    /// Uniform strictly inside (0,1); safe to feed into quantiles/logs.
    double uniform_open(std::uint64_t c0, std::uint64_t c1 = 0, std::uint64_t c2 = 0,
                        unsigned lane = 0) const {
        return (double(raw(c0, c1, c2, lane) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via the inverse-CDF transform.
    double normal(std::uint64_t c0, std::uint64_t c1 = 0, std::uint64_t c2 = 0,
                  unsigned lane = 0) const {
        return normal_quantile(uniform_open(c0, c1, c2, lane));
    }

    /// Uniform integer in [0, n) by 128-bit multiply (n << 2^64 in practice,
    /// so modulo bias is negligible and, above all, deterministic).
    std::uint64_t index(std::uint64_t n, std::uint64_t c0, std::uint64_t c1 = 0,
                        std::uint64_t c2 = 0, unsigned lane = 0) const {
        const unsigned __int128 p =
            static_cast<unsigned __int128>(raw(c0, c1, c2, lane)) * n;
        return static_cast<std::uint64_t>(p >> 64);
    }

private:
    std::array<std::uint64_t, 2> key_;
};

} // namespace mcd
