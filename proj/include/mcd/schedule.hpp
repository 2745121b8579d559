#pragma once

// Discrete signal schedule gamma_t: the probability that a token is
// still visible at noise level t. gamma is strictly decreasing with
// gamma(0) = 1 and gamma(1) = 0.

#include <cmath>
#include <stdexcept>
#include <string>

namespace mcd {

enum class ScheduleKind { linear, cosine };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

struct Schedule {
    ScheduleKind kind = ScheduleKind::linear;
    double t_min = 1e-3; // lower clamp for time draws in training

    Schedule() = default;
    Schedule(ScheduleKind k, double tmin) : kind(k), t_min(tmin) {
        if (!(t_min > 0.0 && t_min < 0.5)) {
            throw std::invalid_argument("Schedule: t_min must lie in (0, 0.5)");
        }
    }
};

/// gamma_t per schedule kind. Throws outside [0,1].
inline double gamma(const Schedule& s, double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("gamma: t outside [0,1]");
    }
    switch (s.kind) {
        case ScheduleKind::linear:
            return 1.0 - t;
        case ScheduleKind::cosine: {
            const double c = std::cos(0.5 * M_PI * t);
            return c * c;
        }
    }
    return 0.0;
}

inline constexpr double kGammaClampLo = 1e-6;
inline constexpr double kGammaClampHi = 1.0 - 1e-6;

/// gamma clamped away from {0,1}; the latent calibration diverges at the
/// endpoints, discrete-side code handles them exactly instead.
inline double gamma_clamped(const Schedule& s, double t) {
    const double g = gamma(s, t);
    return g < kGammaClampLo ? kGammaClampLo : (g > kGammaClampHi ? kGammaClampHi : g);
}

/// Continuous-NELBO time weight -gamma'(t)/(1-gamma(t)); reduces to 1/t
/// for the linear schedule.
inline double nelbo_weight(const Schedule& s, double t) {
    switch (s.kind) {
        case ScheduleKind::linear:
            return 1.0 / t;
        case ScheduleKind::cosine: {
            // gamma' = -pi cos sin; 1-gamma = sin^2
            const double si = std::sin(0.5 * M_PI * t);
            const double co = std::cos(0.5 * M_PI * t);
            return M_PI * co / si;
        }
    }
    return 0.0;
}

} // namespace mcd
