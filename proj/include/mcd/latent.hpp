#pragma once

// Latent Gaussian construction behind the discrete masking process, the
// projection operator, and the Monte Carlo machinery that verifies the
// three facts the rest of the project stands on:
//
//   static duality    P(projection keeps the signal) == gamma_t
//   determinism       fixed noise => the discrete path is a step function
//   scalar locking    the projection decision == threshold on u = F_Y(Y)
//
// The full K-dimensional noise vector is materialized only here; the
// production path carries the scalar u per token.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcd/calibration.hpp"
#include "mcd/parallel.hpp"
#include "mcd/rng.hpp"

namespace mcd {

enum class DiscreteOutcome { signal, mask };

struct LatentState {
    std::vector<double> w;  // length K
    int signal_index = 0;   // in [0, K-2]; the mask dimension is K-1

    int mask_index() const { return static_cast<int>(w.size()) - 1; }
};

/// Fixed trajectory noise: the Gaussian draw, its margin Y, and the
/// uniform scalar u = F_Y(Y) that locks the whole discrete path.
struct TrajectorySeed {
    std::vector<double> epsilon;
    double margin = 0.0;   // Y = max_{j != k} eps_j - eps_k
    double threshold = 0.0; // u = F_Y(Y)
};

/// w = alpha_t * onehot(k) + sigma_t * epsilon.
inline LatentState make_latent(int signal_index, const std::vector<double>& epsilon,
                               const CalibratedSchedule& cal, double t) {
    const int K = cal.vocab_extended;
    if (static_cast<int>(epsilon.size()) != K) {
        throw std::invalid_argument("make_latent: epsilon length must equal K");
    }
    if (signal_index < 0 || signal_index >= K - 1) {
        throw std::invalid_argument("make_latent: signal index out of range");
    }
    const LatentCoefficients c = cal.coefficients(t);
    LatentState st;
    st.signal_index = signal_index;
    st.w.resize(K);
    for (int j = 0; j < K; ++j) st.w[j] = c.sigma * epsilon[j];
    st.w[signal_index] += c.alpha;
    return st;
}

/// Projection: keep the signal iff its coordinate strictly dominates every
/// other; ties (measure zero) resolve to mask so the map stays deterministic.
inline DiscreteOutcome project(const LatentState& state) {
    const int K = static_cast<int>(state.w.size());
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < K; ++j) {
        if (j == state.signal_index) continue;
        if (state.w[j] > best) best = state.w[j];
    }
    return state.w[state.signal_index] > best ? DiscreteOutcome::signal
                                              : DiscreteOutcome::mask;
}

inline TrajectorySeed make_seed(const std::vector<double>& epsilon, int signal_index,
                                const CalibratedSchedule& cal) {
    const int K = cal.vocab_extended;
    if (static_cast<int>(epsilon.size()) != K) {
        throw std::invalid_argument("make_seed: epsilon length must equal K");
    }
    TrajectorySeed seed;
    seed.epsilon = epsilon;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < K; ++j) {
        if (j == signal_index) continue;
        if (epsilon[j] > best) best = epsilon[j];
    }
    seed.margin = best - epsilon[signal_index];
    seed.threshold = cal.cdf(seed.margin);
    return seed;
}

/// Scalar locking: the discrete state at time t, with no fresh randomness.
inline DiscreteOutcome locked_discrete_state(const TrajectorySeed& seed,
                                             const CalibratedSchedule& cal, double t) {
    if (!(seed.threshold > 0.0 && seed.threshold < 1.0)) {
        throw std::invalid_argument("locked_discrete_state: u must lie in (0,1)");
    }
    return cal.gamma_at(t) > seed.threshold ? DiscreteOutcome::signal
                                            : DiscreteOutcome::mask;
}

struct DualityRow {
    double t = 0.0;
    double gamma = 0.0;
    double empirical_unmask = 0.0; // fraction of projections keeping the signal
    double three_sigma = 0.0;      // binomial 3-sigma band around gamma
    double lock_agreement = 0.0;   // u-threshold vs projection agreement at this t
};

struct DualityReport {
    int vocab_extended = 0;
    std::uint64_t n_samples = 0;
    std::uint64_t lock_samples = 0;
    std::uint64_t rng_seed = 0;
    std::vector<DualityRow> rows;
    std::uint64_t nesting_violations = 0;   // signal reappearing after mask
    std::uint64_t switch_violations = 0;    // projected path with != 1 switch
    std::uint64_t lock_disagreements = 0;
    std::uint64_t lock_disagreements_off_boundary = 0;

    bool static_duality_ok() const {
        for (const auto& r : rows) {
            if (std::abs(r.empirical_unmask - r.gamma) > r.three_sigma) return false;
        }
        return true;
    }
    double min_lock_agreement() const {
        double m = 1.0;
        for (const auto& r : rows) m = std::min(m, r.lock_agreement);
        return m;
    }
    bool pass() const {
        return static_duality_ok() && nesting_violations == 0 && switch_violations == 0 &&
               min_lock_agreement() >= 0.999 && lock_disagreements_off_boundary == 0;
    }
};

/// Batch driver for the duality checks. Deterministic in (rng_seed,
/// n_samples, t_grid); the sample loop shards freely across threads
/// because draws are counter-indexed and tallies are integers.
inline DualityReport verify_duality_report(int K, const Schedule& schedule,
                                           std::uint64_t n_samples, int t_grid,
                                           std::uint64_t rng_seed,
                                           double cdf_tolerance = 1e-10,
                                           int threads = 0) {
    if (n_samples < 10000) {
        throw std::invalid_argument("verify_duality_report: need n_samples >= 10^4");
    }
    if (t_grid < 2) throw std::invalid_argument("verify_duality_report: t_grid >= 2");
    const CalibratedSchedule cal(schedule, K, cdf_tolerance);

    DualityReport rep;
    rep.vocab_extended = K;
    rep.n_samples = n_samples;
    rep.lock_samples = std::min<std::uint64_t>(n_samples, 10000);
    rep.rng_seed = rng_seed;

    // interior grid: t_i = i/(t_grid+1), i = 1..t_grid
    std::vector<double> ts(t_grid), gammas(t_grid), ratios(t_grid);
    for (int i = 0; i < t_grid; ++i) {
        ts[i] = double(i + 1) / double(t_grid + 1);
        gammas[i] = gamma(schedule, ts[i]);
        ratios[i] = cal.ratio(ts[i]);
    }

    const RngStream eps_stream(rng_seed, Stream::verify_epsilon);
    const int nthreads = threads > 0 ? threads : hardware_threads();
    const std::int64_t n_chunks = 64 * nthreads;
    const std::int64_t chunk = (std::int64_t(n_samples) + n_chunks - 1) / n_chunks;

    struct Tally {
        std::vector<std::uint64_t> unmask, agree, disagree, off_boundary;
        std::uint64_t nest = 0, sw = 0;
    };
    std::vector<Tally> tallies(n_chunks);

    parallel_for(0, n_chunks, [&](std::int64_t ci) {
        Tally& tl = tallies[ci];
        tl.unmask.assign(t_grid, 0);
        tl.agree.assign(t_grid, 0);
        tl.disagree.assign(t_grid, 0);
        tl.off_boundary.assign(t_grid, 0);
        std::vector<double> eps(K);
        const std::int64_t lo = ci * chunk;
        const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n_samples);
        for (std::int64_t s = lo; s < hi; ++s) {
            for (int j = 0; j < K; ++j) {
                eps[j] = eps_stream.normal(std::uint64_t(s), std::uint64_t(j));
            }
            const int k = 0; // exchangeable across coordinates
            bool masked_before = false;
            int switches = 0;
            bool prev_signal = true;
            const bool want_lock = std::uint64_t(s) < rep.lock_samples;
            double u = 0.0;
            double margin = 0.0;
            if (want_lock) {
                double best = -std::numeric_limits<double>::infinity();
                for (int j = 1; j < K; ++j) best = std::max(best, eps[j]);
                margin = best - eps[k];
                u = cal.cdf(margin);
            }
            for (int ti = 0; ti < t_grid; ++ti) {
                const LatentState st = make_latent(k, eps, cal, ts[ti]);
                const bool signal = project(st) == DiscreteOutcome::signal;
                if (signal) {
                    tl.unmask[ti]++;
                    if (masked_before) tl.nest++;
                } else {
                    masked_before = true;
                }
                if (ti == 0) {
                    prev_signal = signal;
                } else if (signal != prev_signal) {
                    switches++;
                    prev_signal = signal;
                }
                if (want_lock) {
                    const bool lock_signal = gammas[ti] > u;
                    if (lock_signal == signal) {
                        tl.agree[ti]++;
                    } else {
                        tl.disagree[ti]++;
                        if (std::abs(u - gammas[ti]) > cdf_tolerance) tl.off_boundary[ti]++;
                    }
                }
            }
            // the projected path must flip signal -> mask at most once; count
            // paths that flip more than once or flip mask -> signal
            if (switches > 1) tl.sw++;
        }
    }, nthreads);

    rep.rows.resize(t_grid);
    for (int ti = 0; ti < t_grid; ++ti) {
        std::uint64_t unmask = 0, agree = 0, dis = 0, off = 0;
        for (const auto& tl : tallies) {
            unmask += tl.unmask[ti];
            agree += tl.agree[ti];
            dis += tl.disagree[ti];
            off += tl.off_boundary[ti];
        }
        DualityRow& r = rep.rows[ti];
        r.t = ts[ti];
        r.gamma = gammas[ti];
        r.empirical_unmask = double(unmask) / double(n_samples);
        r.three_sigma = 3.0 * std::sqrt(r.gamma * (1.0 - r.gamma) / double(n_samples));
        r.lock_agreement = double(agree) / double(agree + dis);
        rep.lock_disagreements += dis;
        rep.lock_disagreements_off_boundary += off;
    }
    for (const auto& tl : tallies) {
        rep.nesting_violations += tl.nest;
        rep.switch_violations += tl.sw;
    }
    return rep;
}

/// CSV: one row per t plus a trailing summary comment line.
inline std::string duality_report_csv(const std::vector<DualityReport>& reports) {
    std::string out =
        "K,t,gamma,empirical_unmask,abs_err,three_sigma,lock_agreement\n";
    char buf[256];
    bool all_pass = true;
    for (const auto& rep : reports) {
        for (const auto& r : rep.rows) {
            std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                          rep.vocab_extended, r.t, r.gamma, r.empirical_unmask,
                          std::abs(r.empirical_unmask - r.gamma), r.three_sigma,
                          r.lock_agreement);
            out += buf;
        }
        all_pass = all_pass && rep.pass();
    }
    for (const auto& rep : reports) {
        std::snprintf(buf, sizeof(buf),
                      "# K=%d n=%llu static_ok=%d nesting_violations=%llu "
                      "switch_violations=%llu min_lock_agreement=%.6f "
                      "lock_disagreements_off_boundary=%llu\n",
                      rep.vocab_extended,
                      static_cast<unsigned long long>(rep.n_samples),
                      rep.static_duality_ok() ? 1 : 0,
                      static_cast<unsigned long long>(rep.nesting_violations),
                      static_cast<unsigned long long>(rep.switch_violations),
                      rep.min_lock_agreement(),
                      static_cast<unsigned long long>(rep.lock_disagreements_off_boundary));
        out += buf;
    }
    out += all_pass ? "# summary: pass=1\n" : "# summary: pass=0\n";
    return out;
}

} // namespace mcd
