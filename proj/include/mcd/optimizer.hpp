#pragma once

// Adam with linear warmup then constant learning rate.

#include <cmath>
#include <cstdint>

#include "mcd/denoiser.hpp"

namespace mcd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup = 500;
};

class Adam {
public:
    Adam(const ModelConfig& c, AdamConfig cfg) : cfg_(cfg), m_(zero_params(c)), v_(zero_params(c)) {}

    double current_lr() const {
        if (cfg_.warmup <= 0) return cfg_.lr;
        const double ramp = std::min(1.0, double(step_ + 1) / double(cfg_.warmup));
        return cfg_.lr * ramp;
    }

    void step(Params& p, const Params& g) {
        const double lr = current_lr();
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        auto ms = collect(m_);
        auto vs = collect(v_);
        std::vector<const Matrix*> gs;
        g.for_each([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
        std::size_t idx = 0;
        p.for_each([&](const std::string&, Matrix& w) {
            Matrix& m = *ms[idx];
            Matrix& v = *vs[idx];
            const Matrix& gr = *gs[idx];
            ++idx;
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gr;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gr.array().square().matrix();
            w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
        });
    }

    std::int64_t steps_taken() const { return step_; }

private:
    static std::vector<Matrix*> collect(Params& p) {
        std::vector<Matrix*> out;
        p.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
        return out;
    }

    AdamConfig cfg_;
    Params m_, v_;
    std::int64_t step_ = 0;
};

inline double grad_norm(const Params& g) {
    double s = 0.0;
    g.for_each([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
    return std::sqrt(s);
}

} // namespace mcd
