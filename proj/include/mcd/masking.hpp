#pragma once

// Production-path discrete masking. A trajectory is locked by one shared
// uniform vector u: position i is masked at level t iff u[i] > gamma_t.
// Coupled pairs (z_t, z_s) built from the same u are nested by
// construction, which is exactly what consistency distillation needs.

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mcd/rng.hpp"

namespace mcd {

/// Fixed-length token sequence over an extended vocabulary of size K;
/// the mask token is id K-1, clean data never contains it.
struct TokenSequence {
    std::vector<std::int32_t> ids;
    std::int32_t vocab = 2;

    std::int32_t mask_id() const { return vocab - 1; }
    std::size_t size() const { return ids.size(); }

    void validate() const {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= vocab) {
                throw std::invalid_argument("TokenSequence: id out of range at position " +
                                            std::to_string(i));
            }
        }
    }
};

/// One uniform scalar per position, reused across every time step of a
/// trajectory.
struct LockNoise {
    std::vector<double> u;
};

inline LockNoise draw_lock_noise(std::size_t length, const RngStream& stream,
                                 std::uint64_t item) {
    LockNoise n;
    n.u.resize(length);
    for (std::size_t i = 0; i < length; ++i) n.u[i] = stream.uniform(item, i);
    return n;
}

struct MaskIndicator {
    std::vector<std::uint8_t> m; // 1 = masked

    std::size_t count() const {
        std::size_t c = 0;
        for (auto v : m) c += v;
        return c;
    }
};

/// Deterministic masking operator: z[i] = mask iff u[i] > gamma_t.
inline std::pair<TokenSequence, MaskIndicator> mask_locked(const TokenSequence& x0,
                                                           const LockNoise& noise,
                                                           double gamma_t) {
    if (noise.u.size() != x0.size()) {
        throw std::invalid_argument("mask_locked: noise length mismatch");
    }
    if (!(gamma_t >= 0.0 && gamma_t <= 1.0)) {
        throw std::invalid_argument("mask_locked: gamma outside [0,1]");
    }
    TokenSequence z = x0;
    MaskIndicator ind;
    ind.m.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const bool masked = noise.u[i] > gamma_t;
        ind.m[i] = masked ? 1 : 0;
        if (masked) z.ids[i] = x0.mask_id();
    }
    return {std::move(z), std::move(ind)};
}

struct CoupledPair {
    TokenSequence z_t, z_s;
    MaskIndicator m_t, m_s;
};

/// Student/teacher views at levels t > s from the same lock noise.
/// Requires gamma_s >= gamma_t; m_s <= m_t holds elementwise.
inline CoupledPair coupled_pair(const TokenSequence& x0, const LockNoise& noise,
                                double gamma_t, double gamma_s) {
    if (gamma_s < gamma_t) {
        throw std::invalid_argument("coupled_pair: need gamma_s >= gamma_t (s < t)");
    }
    CoupledPair p;
    std::tie(p.z_t, p.m_t) = mask_locked(x0, noise, gamma_t);
    std::tie(p.z_s, p.m_s) = mask_locked(x0, noise, gamma_s);
    return p;
}

/// Independent forward corruption (teacher pretraining only): each
/// position masks with fresh probability 1 - gamma_t.
inline TokenSequence forward_sample(const TokenSequence& x0, double gamma_t,
                                    const RngStream& stream, std::uint64_t item) {
    if (!(gamma_t >= 0.0 && gamma_t <= 1.0)) {
        throw std::invalid_argument("forward_sample: gamma outside [0,1]");
    }
    TokenSequence z = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        if (stream.uniform(item, i) < 1.0 - gamma_t) z.ids[i] = x0.mask_id();
    }
    return z;
}

} // namespace mcd
