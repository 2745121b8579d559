#pragma once

// Loss functions over denoiser logits and their gradients w.r.t. the
// student logits. Four variants:
//
//   pretrain_ce  masked cross-entropy, time weight w(t), teacher pretraining
//   hybrid       KL(student || sharpened teacher) on mutually masked
//                positions + CE reconstruction on teacher-only positions
//   kl_fwd       KL(teacher || student) on mutually masked positions
//   kl_bwd       KL(student || teacher) on mutually masked positions
//
// The teacher side is gradient-stopped in all variants. Reduction: mean
// over contributing positions per term, sum of terms, mean over batch.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcd/denoiser.hpp"
#include "mcd/masking.hpp"

namespace mcd {

enum class LossKind { pretrain_ce, hybrid, kl_fwd, kl_bwd };

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "pretrain_ce") return LossKind::pretrain_ce;
    if (s == "hybrid") return LossKind::hybrid;
    if (s == "kl_fwd") return LossKind::kl_fwd;
    if (s == "kl_bwd") return LossKind::kl_bwd;
    throw std::invalid_argument("unknown loss variant: " + s);
}

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::pretrain_ce: return "pretrain_ce";
        case LossKind::hybrid: return "hybrid";
        case LossKind::kl_fwd: return "kl_fwd";
        case LossKind::kl_bwd: return "kl_bwd";
    }
    return "?";
}

struct LossValue {
    double total = 0.0;
    double kl = 0.0; // distillation term (0 for pretrain_ce)
    double ce = 0.0; // reconstruction term (all of pretrain_ce)
};

namespace detail {

/// Row log-softmax into `out`; returns nothing. Stable ((x - max) - lse).
inline void log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row,
                            Eigen::RowVectorXd& out) {
    const double mx = row.maxCoeff();
    out = row.array() - mx;
    const double lse = std::log(out.array().exp().sum());
    out.array() -= lse;
}

} // namespace detail

/// sharpen(p, tau) proportional to exp(log p / tau): returns the
/// log-probabilities of the tempered distribution given raw logits.
inline Eigen::RowVectorXd sharpen_log_probs(const Eigen::RowVectorXd& logits, double tau) {
    Eigen::RowVectorXd out;
    Eigen::RowVectorXd scaled = logits / tau;
    detail::log_softmax_row(scaled, out);
    return out;
}

struct LossSpec {
    LossKind kind = LossKind::pretrain_ce;
    // pretrain_ce
    const std::vector<TokenSequence>* x0 = nullptr;
    const std::vector<MaskIndicator>* masked = nullptr; // positions hidden in z
    const std::vector<double>* time_weight = nullptr;   // w(t_b) per sequence
    // distillation variants
    const LogitsBatch* teacher = nullptr; // logits at z_s, gradient-stopped
    const std::vector<MaskIndicator>* m_t = nullptr;
    const std::vector<MaskIndicator>* m_s = nullptr;
    double tau = 1.0;
};

/// Loss value and gradient w.r.t. student logits. `student` are logits at
/// z_t (or z for pretraining). dlogits has the same shape as the logits.
inline LossValue loss_and_dlogits(const LogitsBatch& student, const LossSpec& spec,
                                  Matrix* dlogits) {
    const int B = student.batch, L = student.length, V = student.clean_vocab;
    if (dlogits) dlogits->setZero(B * L, V);

    LossValue out;
    Eigen::RowVectorXd lp(V), lq(V), p(V);

    if (spec.kind == LossKind::pretrain_ce) {
        if (!spec.x0 || !spec.masked || !spec.time_weight) {
            throw std::invalid_argument("loss: pretrain_ce needs x0, masked, time_weight");
        }
        for (int b = 0; b < B; ++b) {
            const auto& x0 = (*spec.x0)[b];
            const auto& m = (*spec.masked)[b].m;
            int n_masked = 0;
            for (int i = 0; i < L; ++i) n_masked += m[i];
            if (n_masked == 0) continue; // no contribution, gradient 0
            const double w = (*spec.time_weight)[b];
            const double coeff = w / (double(n_masked) * double(B));
            double ce_sum = 0.0;
            for (int i = 0; i < L; ++i) {
                if (!m[i]) continue;
                const int row = b * L + i;
                detail::log_softmax_row(student.values.row(row), lp);
                const int target = x0.ids[i];
                ce_sum += -lp(target);
                if (dlogits) {
                    p = lp.array().exp();
                    dlogits->row(row) = coeff * p;
                    (*dlogits)(row, target) -= coeff;
                }
            }
            out.ce += w * ce_sum / double(n_masked);
        }
        out.ce /= double(B);
        out.total = out.ce;
        if (!std::isfinite(out.total)) {
            throw std::runtime_error("loss: non-finite pretrain_ce");
        }
        return out;
    }

    if (!spec.teacher || !spec.m_t || !spec.m_s || !spec.x0) {
        throw std::invalid_argument("loss: distillation needs teacher, m_t, m_s, x0");
    }
    if (!(spec.tau > 0.0 && spec.tau <= 1.0)) {
        throw std::invalid_argument("loss: tau must lie in (0,1]");
    }

    for (int b = 0; b < B; ++b) {
        const auto& mt = (*spec.m_t)[b].m;
        const auto& ms = (*spec.m_s)[b].m;
        const auto& x0 = (*spec.x0)[b];
        int n_s = 0, n_ts = 0;
        for (int i = 0; i < L; ++i) {
            if (ms[i] > mt[i]) {
                throw std::invalid_argument("loss: mask nesting violated (m_s > m_t) in batch " +
                                            std::to_string(b));
            }
            n_s += ms[i];
            n_ts += mt[i] - ms[i];
        }
        double kl_sum = 0.0, ce_sum = 0.0;
        for (int i = 0; i < L; ++i) {
            const int row = b * L + i;
            if (ms[i]) {
                detail::log_softmax_row(student.values.row(row), lp);
                lq = sharpen_log_probs(spec.teacher->values.row(row), spec.tau);
                p = lp.array().exp();
                if (spec.kind == LossKind::kl_fwd) {
                    // KL(teacher || student)
                    const Eigen::RowVectorXd q = lq.array().exp();
                    kl_sum += std::max(0.0, (q.array() * (lq - lp).array()).sum());
                    if (dlogits) {
                        const double c = 1.0 / (double(n_s) * double(B));
                        dlogits->row(row) = c * (p - q);
                    }
                } else { // hybrid and kl_bwd share KL(student || teacher)
                    const double kl_raw = (p.array() * (lp - lq).array()).sum();
                    kl_sum += std::max(0.0, kl_raw); // clamp fp round-off at exact match
                    if (dlogits) {
                        const double c = 1.0 / (double(n_s) * double(B));
                        dlogits->row(row) =
                            c * (p.array() * ((lp - lq).array() - kl_raw)).matrix();
                    }
                }
            } else if (mt[i] && spec.kind == LossKind::hybrid) {
                detail::log_softmax_row(student.values.row(row), lp);
                const int target = x0.ids[i];
                ce_sum += -lp(target);
                if (dlogits) {
                    const double c = 1.0 / (double(n_ts) * double(B));
                    p = lp.array().exp();
                    dlogits->row(row) = c * p;
                    (*dlogits)(row, target) -= c;
                }
            }
        }
        if (n_s > 0) out.kl += kl_sum / double(n_s);
        if (n_ts > 0 && spec.kind == LossKind::hybrid) out.ce += ce_sum / double(n_ts);
    }
    out.kl /= double(B);
    out.ce /= double(B);
    out.total = out.kl + out.ce;
    if (!std::isfinite(out.total)) {
        throw std::runtime_error("loss: non-finite distillation loss");
    }
    return out;
}

/// Forward + loss + backward in one call. The gradient matches central
/// finite differences to < 1e-3 relative error (see the test suite).
inline std::pair<LossValue, Params> loss_and_gradient(const DenoiserModel& model,
                                                      const std::vector<TokenSequence>& batch,
                                                      const LossSpec& spec) {
    detail::ForwardCache cache;
    const LogitsBatch logits = forward(model, batch, &cache);
    Matrix dlogits;
    const LossValue v = loss_and_dlogits(logits, spec, &dlogits);
    Params g = backward(model, batch, cache, dlogits);
    return {v, std::move(g)};
}

} // namespace mcd
