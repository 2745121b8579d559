#pragma once

// Two training loops.
//
// Teacher pretraining: masked cross-entropy with time weight
// w(t) = -gamma'(t)/(1-gamma(t)) (1/t for the linear schedule), masks
// drawn fresh per step.
//
// Distillation: staged curriculum. Each round hard-copies the student
// into the frozen teacher, then runs M iterations of: sample x0, lock
// noise u, draw t ~ U(delta, 1], s = t - delta, build the coupled pair
// (z_t, z_s) from the same u, and take one optimizer step on the hybrid
// objective (or an ablation variant). The gap delta doubles after each
// round; the teacher temperature tau anneals linearly.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcd/loss.hpp"
#include "mcd/markov.hpp"
#include "mcd/masking.hpp"
#include "mcd/optimizer.hpp"
#include "mcd/schedule.hpp"

namespace mcd {

/// Uniform random draws from a fixed set of sequences, keyed by
/// (stream, step, slot) so batches replay exactly.
class DataStream {
public:
    DataStream(std::vector<TokenSequence> data, std::uint64_t seed, Stream label)
        : data_(std::move(data)), rng_(seed, label) {
        if (data_.empty()) throw std::invalid_argument("DataStream: empty data");
    }

    std::vector<TokenSequence> batch(std::uint64_t step, int size) const {
        std::vector<TokenSequence> out;
        out.reserve(size);
        for (int b = 0; b < size; ++b) {
            out.push_back(data_[rng_.index(data_.size(), step, std::uint64_t(b))]);
        }
        return out;
    }

    const std::vector<TokenSequence>& data() const { return data_; }

private:
    std::vector<TokenSequence> data_;
    RngStream rng_;
};

struct PretrainConfig {
    std::int64_t steps = 3000;
    int batch = 32;
    double lr = 1e-3;
    int warmup = 500;
    std::uint64_t seed = 0;
    Schedule schedule;
};

/// Trains the denoiser on the independent forward masking process.
/// Appends "step,t_mean,loss,grad_norm" rows to `metrics` when given.
/// Aborts with a state dump path on non-finite loss.
inline DenoiserModel pretrain_teacher(const DataStream& data, DenoiserModel model,
                                      const PretrainConfig& cfg, std::string* metrics = nullptr) {
    if (cfg.steps < 1) throw std::invalid_argument("pretrain_teacher: steps must be >= 1");
    Adam opt(model.config, {cfg.lr, 0.9, 0.999, 1e-8, cfg.warmup});
    const RngStream time_rng(cfg.seed, Stream::pretrain_time);
    const RngStream mask_rng(cfg.seed, Stream::pretrain_mask);
    char buf[160];
    if (metrics) *metrics += "step,t_mean,loss,grad_norm\n";

    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        const std::vector<TokenSequence> x0 = data.batch(std::uint64_t(step), cfg.batch);
        std::vector<TokenSequence> z(cfg.batch);
        std::vector<MaskIndicator> masked(cfg.batch);
        std::vector<double> weight(cfg.batch);
        double t_mean = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const double t = cfg.schedule.t_min +
                             time_rng.uniform(std::uint64_t(step), std::uint64_t(b)) *
                                 (1.0 - cfg.schedule.t_min);
            t_mean += t / cfg.batch;
            const double g = gamma(cfg.schedule, t);
            weight[b] = nelbo_weight(cfg.schedule, t);
            z[b] = forward_sample(x0[b], g, mask_rng,
                                  std::uint64_t(step) * std::uint64_t(cfg.batch) + b);
            masked[b].m.resize(x0[b].size());
            for (std::size_t i = 0; i < x0[b].size(); ++i) {
                masked[b].m[i] = z[b].ids[i] == z[b].mask_id() ? 1 : 0;
            }
        }
        LossSpec spec;
        spec.kind = LossKind::pretrain_ce;
        spec.x0 = &x0;
        spec.masked = &masked;
        spec.time_weight = &weight;
        auto [value, grads] = loss_and_gradient(model, z, spec);
        if (!std::isfinite(value.total)) {
            throw std::runtime_error("pretrain_teacher: loss diverged at step " +
                                     std::to_string(step));
        }
        opt.step(model.p, grads);
        if (!model.p.all_finite()) {
            throw std::runtime_error("pretrain_teacher: non-finite parameters at step " +
                                     std::to_string(step));
        }
        if (metrics) {
            std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.10g,%.10g\n",
                          static_cast<long long>(step), t_mean, value.total, grad_norm(grads));
            *metrics += buf;
        }
    }
    return model;
}

struct DistillConfig {
    int rounds = 3;            // N
    int iters_per_round = 2000; // M
    double delta0 = 1.0 / 512.0;
    double lr = 1e-3;
    int warmup = 0;
    double tau_init = 0.96;
    double tau_step = 0.03;
    LossKind loss_variant = LossKind::hybrid;
    int batch = 32;
    std::uint64_t seed = 0;
    Schedule schedule;

    void validate() const {
        if (rounds < 1) throw std::invalid_argument("DistillConfig: rounds >= 1");
        if (iters_per_round < 0) throw std::invalid_argument("DistillConfig: iters >= 0");
        if (!(delta0 > 0.0 && delta0 < 1.0)) {
            throw std::invalid_argument("DistillConfig: delta0 in (0,1)");
        }
        if (delta0 * std::pow(2.0, rounds - 1) >= 1.0) {
            throw std::invalid_argument("DistillConfig: final gap delta0*2^(N-1) must stay < 1");
        }
        if (loss_variant == LossKind::pretrain_ce) {
            throw std::invalid_argument("DistillConfig: pretrain_ce is not a distillation loss");
        }
    }

    /// tau for 1-based round r, clamped at 0.05 to avoid one-hot targets.
    double tau(int round) const {
        return std::max(0.05, tau_init - tau_step * double(round - 1));
    }
    /// delta for 1-based round r: delta0 doubled after each round.
    double delta(int round) const { return delta0 * std::pow(2.0, double(round - 1)); }
};

struct TrainState {
    DenoiserModel student;
    DenoiserModel teacher; // updated only by hard copy at round boundaries
    int round = 0;
    std::int64_t step = 0;
    std::string metrics; // CSV rows
};

namespace detail {

struct StepOutcome {
    LossValue value;
    double grad_norm = 0.0;
};

inline StepOutcome distill_step(TrainState& state, const DistillConfig& cfg,
                                const DataStream& data, Adam& opt, int round,
                                std::int64_t iter) {
    const RngStream noise_rng(cfg.seed, Stream::distill_noise);
    const RngStream time_rng(cfg.seed, Stream::distill_time);
    const double delta = cfg.delta(round);
    const double tau = cfg.tau(round);
    const std::uint64_t key = (std::uint64_t(round) << 40) ^ std::uint64_t(iter);

    const std::vector<TokenSequence> x0 =
        data.batch(key, cfg.batch);
    std::vector<TokenSequence> z_t(cfg.batch), z_s(cfg.batch);
    std::vector<MaskIndicator> m_t(cfg.batch), m_s(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b) {
        const LockNoise u = draw_lock_noise(x0[b].size(), noise_rng,
                                            key * std::uint64_t(cfg.batch) + b);
        // t ~ U(delta, 1], s = t - delta
        const double t = 1.0 - time_rng.uniform(key, std::uint64_t(b)) * (1.0 - delta);
        const double s = t - delta;
        CoupledPair pair = coupled_pair(x0[b], u, gamma(cfg.schedule, t),
                                        gamma(cfg.schedule, s));
        z_t[b] = std::move(pair.z_t);
        z_s[b] = std::move(pair.z_s);
        m_t[b] = std::move(pair.m_t);
        m_s[b] = std::move(pair.m_s);
    }
    const LogitsBatch teacher_logits = forward(state.teacher, z_s);
    LossSpec spec;
    spec.kind = cfg.loss_variant;
    spec.x0 = &x0;
    spec.teacher = &teacher_logits;
    spec.m_t = &m_t;
    spec.m_s = &m_s;
    spec.tau = tau;
    auto [value, grads] = loss_and_gradient(state.student, z_t, spec);
    if (!std::isfinite(value.total)) {
        throw std::runtime_error("distill: non-finite loss at round " + std::to_string(round) +
                                 " iter " + std::to_string(iter));
    }
    opt.step(state.student.p, grads);
    if (!state.student.p.all_finite()) {
        throw std::runtime_error("distill: non-finite parameters at round " +
                                 std::to_string(round) + " iter " + std::to_string(iter));
    }
    return {value, grad_norm(grads)};
}

} // namespace detail

inline const char* kMetricsHeader = "round,step,delta,tau,loss_total,loss_kl,loss_ce,grad_norm\n";

/// One distillation round: teacher already reset by the caller; runs M
/// iterations and appends metrics rows. The teacher is untouched inside.
inline TrainState mcd_round(TrainState state, const DistillConfig& cfg, const DataStream& data,
                            Adam& opt, int round) {
    cfg.validate();
    char buf[200];
    for (std::int64_t iter = 0; iter < cfg.iters_per_round; ++iter) {
        const auto out = detail::distill_step(state, cfg, data, opt, round, iter);
        std::snprintf(buf, sizeof(buf), "%d,%lld,%.10g,%.4f,%.10g,%.10g,%.10g,%.10g\n",
                      round, static_cast<long long>(state.step), cfg.delta(round),
                      cfg.tau(round), out.value.total, out.value.kl, out.value.ce,
                      out.grad_norm);
        state.metrics += buf;
        state.step++;
    }
    state.round = round;
    return state;
}

struct DistillResult {
    DenoiserModel student;
    std::string metrics_csv;
    std::vector<std::string> checkpoint_paths;
    bool aborted = false;
    std::string abort_reason;
};

/// Algorithm: N rounds, each beginning with a hard teacher reset
/// (theta^- <- theta) and the annealed tau; delta doubles per round.
/// Writes student_r{n}.mcd per round into out_dir; on a non-finite loss
/// the last good checkpoint is retained and the run stops.
inline DistillResult run_distillation(const DenoiserModel& teacher_init,
                                      const DistillConfig& cfg, const DataStream& data,
                                      const std::string& out_dir) {
    cfg.validate();
    TrainState state;
    state.student = teacher_init;
    state.teacher = teacher_init;
    state.metrics = kMetricsHeader;
    Adam opt(state.student.config, {cfg.lr, 0.9, 0.999, 1e-8, cfg.warmup});

    DistillResult result;
    std::filesystem::create_directories(out_dir);
    for (int round = 1; round <= cfg.rounds; ++round) {
        state.teacher.p = state.student.p; // hard reset, never by gradient
        try {
            state = mcd_round(std::move(state), cfg, data, opt, round);
        } catch (const std::runtime_error& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        }
        const std::string path = out_dir + "/student_r" + std::to_string(round) + ".mcd";
        save_checkpoint(state.student, path);
        result.checkpoint_paths.push_back(path);
    }
    result.student = std::move(state.student);
    result.metrics_csv = std::move(state.metrics);
    return result;
}

/// Spec'd entry point: the scalar loss of one coupled view pair.
inline LossValue loss_mcd(const LogitsBatch& student_logits, const LogitsBatch& teacher_logits,
                          const std::vector<TokenSequence>& x0,
                          const std::vector<MaskIndicator>& m_t,
                          const std::vector<MaskIndicator>& m_s, double tau,
                          LossKind variant) {
    LossSpec spec;
    spec.kind = variant;
    spec.x0 = &x0;
    spec.teacher = &teacher_logits;
    spec.m_t = &m_t;
    spec.m_s = &m_s;
    spec.tau = tau;
    return loss_and_dlogits(student_logits, spec, nullptr);
}

} // namespace mcd
