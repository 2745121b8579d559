#pragma once

// Benchmark grid: oracle generative perplexity of a teacher (round 0)
// and per-round students across step counts, against the known source.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mcd/markov.hpp"
#include "mcd/sampler.hpp"

namespace mcd {

struct EvalCell {
    int round = 0; // 0 = teacher
    int steps = 0;
    double ppl = 0.0;
    std::int64_t mask_residual = 0;
    double unigram_tv = 0.0;
    // extra diagnostics, not part of the CSV schema
    double mean_nll = 0.0; // per-token, nats
    double se_nll = 0.0;   // standard error of mean_nll
};

struct EvalReport {
    std::vector<EvalCell> rows;
    double source_entropy = 0.0;

    std::string csv() const {
        std::string out = "round,steps,ppl,mask_residual,unigram_tv\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%lld,%.10g\n", r.round, r.steps,
                          r.ppl, static_cast<long long>(r.mask_residual), r.unigram_tv);
            out += buf;
        }
        return out;
    }

    const EvalCell* find(int round, int steps) const {
        for (const auto& r : rows) {
            if (r.round == round && r.steps == steps) return &r;
        }
        return nullptr;
    }

    /// Sigma severity of the worst oracle-floor violation: how far below
    /// the source entropy the best cell's mean NLL sits, in standard errors.
    double worst_floor_violation_sigma() const {
        double worst = -1e300;
        for (const auto& r : rows) {
            if (r.se_nll <= 0.0) continue;
            worst = std::max(worst, (source_entropy - r.mean_nll) / r.se_nll);
        }
        return worst;
    }
};

inline EvalCell evaluate_model(const DenoiserModel& model, int round, int steps,
                               const MarkovSource& source, int count, std::uint64_t seed,
                               const Schedule& schedule) {
    SamplerConfig cfg;
    cfg.steps = steps;
    cfg.schedule = schedule;
    cfg.seed = seed;
    const std::vector<TokenSequence> samples = generate(model, cfg, count);

    EvalCell cell;
    cell.round = round;
    cell.steps = steps;
    for (const auto& s : samples) {
        for (auto id : s.ids) cell.mask_residual += (id >= source.alphabet()) ? 1 : 0;
    }
    cell.ppl = oracle_ppl(samples, source);
    cell.unigram_tv = unigram_tv(samples, source);

    // per-token NLL moments for the oracle-floor diagnostic
    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double nll = -std::log(source.conditional(s, i));
            sum += nll;
            sum2 += nll * nll;
            ++n;
        }
    }
    cell.mean_nll = sum / double(n);
    const double var = sum2 / double(n) - cell.mean_nll * cell.mean_nll;
    cell.se_nll = std::sqrt(std::max(0.0, var) / double(n));
    return cell;
}

/// Grid evaluation: teacher occupies round 0, students rounds 1..N.
inline EvalReport run_benchmark(const DenoiserModel& teacher,
                                const std::vector<DenoiserModel>& students_by_round,
                                const std::vector<int>& steps_list,
                                const MarkovSource& source, int count, std::uint64_t seed,
                                const Schedule& schedule) {
    EvalReport rep;
    rep.source_entropy = source.entropy_rate();
    for (int steps : steps_list) {
        rep.rows.push_back(
            evaluate_model(teacher, 0, steps, source, count, seed, schedule));
    }
    for (std::size_t r = 0; r < students_by_round.size(); ++r) {
        for (int steps : steps_list) {
            rep.rows.push_back(evaluate_model(students_by_round[r], int(r + 1), steps,
                                              source, count, seed, schedule));
        }
    }
    return rep;
}

} // namespace mcd
