#pragma once

// SNR calibration between the discrete masking schedule and the latent
// Gaussian construction. For a signal dimension competing with K-1 iid
// standard normal noise coordinates, the margin Y = max_{j != k} eps_j
// - eps_k has CDF
//
//     F_Y(y) = integral phi(x) * Phi(x + y)^(K-1) dx,
//
// and the latent ratio alpha_t/sigma_t = F_Y^{-1}(gamma_t) makes the
// projected process match gamma_t exactly.
//
// F_Y is evaluated by Gauss-Hermite quadrature for K <= 256 (error below
// 1e-12 there) and by adaptive Simpson on [-12,12] for larger K, where
// the sharpening integrand outgrows a 256-node rule. Both paths are kept
// honest against each other in the test suite.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mcd/schedule.hpp"
#include "mcd/stats.hpp"

namespace mcd {

/// Gauss-Hermite nodes/weights for integral e^{-x^2} f(x) dx, by the
/// Golub-Welsch eigenvalue method on the Jacobi matrix (off-diagonals
/// sqrt(k/2), weights sqrt(pi) * first-eigenvector-component squared).
struct GaussHermite {
    std::vector<double> x, w;

    explicit GaussHermite(int n) {
        if (n < 2) throw std::invalid_argument("GaussHermite: need n >= 2");
        Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
        for (int k = 1; k < n; ++k) {
            const double b = std::sqrt(0.5 * k);
            jacobi(k, k - 1) = b;
            jacobi(k - 1, k) = b;
        }
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
        if (es.info() != Eigen::Success) {
            throw std::runtime_error("GaussHermite: eigendecomposition failed");
        }
        x.resize(n);
        w.resize(n);
        for (int i = 0; i < n; ++i) {
            x[i] = es.eigenvalues()(i);
            const double q0 = es.eigenvectors()(0, i);
            w[i] = kSqrtPi * q0 * q0;
        }
    }
};

namespace detail {

inline const GaussHermite& gh_table(int nodes) {
    // one shared read-only table per node count; built on first use
    static const GaussHermite gh128(128);
    static const GaussHermite gh256(256);
    if (nodes == 128) return gh128;
    if (nodes == 256) return gh256;
    thread_local GaussHermite custom(nodes);
    if (static_cast<int>(custom.x.size()) != nodes) custom = GaussHermite(nodes);
    return custom;
}

inline double cdf_margin_gh(double y, int K, int nodes) {
    const GaussHermite& gh = gh_table(nodes);
    const double km1 = double(K - 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < gh.x.size(); ++i) {
        acc += gh.w[i] * std::exp(km1 * log_normal_cdf(kSqrt2 * gh.x[i] + y));
    }
    return acc / kSqrtPi;
}

template <typename F>
double simpson_rec(const F& f, double a, double m, double b, double fa, double fm,
                   double fb, double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return simpson_rec(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_rec(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_rec(f, a, m, b, fa, fm, fb, whole, tol, 52);
}

inline double cdf_margin_simpson(double y, int K, double tol) {
    const double km1 = double(K - 1);
    auto f = [=](double x) {
        return normal_pdf(x) * std::exp(km1 * log_normal_cdf(x + y));
    };
    // phi truncation beyond |x|=12 contributes < 1e-31
    return adaptive_simpson(f, -12.0, 12.0, tol);
}

} // namespace detail

inline constexpr int kGaussHermiteMaxK = 256;

/// F_Y(y) for extended vocabulary size K (>= 2). Absolute error bounded
/// by `tol` (default 1e-10).
inline double cdf_margin(double y, int K, double tol = 1e-10, int gh_nodes = 256) {
    if (K < 2) throw std::invalid_argument("cdf_margin: K must be >= 2");
    if (!std::isfinite(y)) throw std::invalid_argument("cdf_margin: y must be finite");
    if (K <= kGaussHermiteMaxK && gh_nodes >= 128) {
        return detail::cdf_margin_gh(y, K, gh_nodes);
    }
    return detail::cdf_margin_simpson(y, K, 0.01 * tol);
}

/// F_Y^{-1}(gamma) by bracketed bisection; post: |F_Y(result) - gamma| <= tol.
inline double inv_cdf_margin(double g, int K, double tol = 1e-10, int gh_nodes = 256) {
    if (K < 2) throw std::invalid_argument("inv_cdf_margin: K must be >= 2");
    if (!(g > 0.0 && g < 1.0)) {
        throw std::invalid_argument("inv_cdf_margin: gamma must lie strictly in (0,1)");
    }
    auto F = [&](double y) { return cdf_margin(y, K, tol, gh_nodes); };
    double lo = -2.0, hi = 2.0;
    while (F(lo) > g) {
        hi = lo;
        lo *= 2.0;
        if (lo < -1e4) throw std::runtime_error("inv_cdf_margin: bracket failure (low)");
    }
    while (F(hi) < g) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e4) throw std::runtime_error("inv_cdf_margin: bracket failure (high)");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (F(mid) < g) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-13 * (1.0 + std::abs(lo) + std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

/// Variance-preserving latent coefficients for a given ratio r = alpha/sigma.
struct LatentCoefficients {
    double alpha;
    double sigma;
};

inline LatentCoefficients coefficients_from_ratio(double r) {
    const double s = 1.0 / std::sqrt(1.0 + r * r);
    return {r * s, s};
}

/// A schedule paired with the calibration for a fixed extended vocabulary
/// size K. ratio(t) = F_Y^{-1}(clamp(gamma_t)) is strictly decreasing in t.
struct CalibratedSchedule {
    Schedule schedule;
    int vocab_extended = 2; // K = vocabulary size + 1 (mask dimension)
    double cdf_tolerance = 1e-10;
    int gh_nodes = 256;

    CalibratedSchedule() = default;
    CalibratedSchedule(Schedule s, int K, double tol = 1e-10, int nodes = 256)
        : schedule(s), vocab_extended(K), cdf_tolerance(tol), gh_nodes(nodes) {
        if (K < 2) throw std::invalid_argument("CalibratedSchedule: K must be >= 2");
        if (nodes < 128) throw std::invalid_argument("CalibratedSchedule: need >= 128 nodes");
    }

    double gamma_at(double t) const { return mcd::gamma(schedule, t); }

    double cdf(double y) const {
        return cdf_margin(y, vocab_extended, cdf_tolerance, gh_nodes);
    }

    double inv_cdf(double g) const {
        return inv_cdf_margin(g, vocab_extended, cdf_tolerance, gh_nodes);
    }

    /// Calibrated latent SNR at time t (gamma clamped to [1e-6, 1-1e-6]).
    double ratio(double t) const { return inv_cdf(gamma_clamped(schedule, t)); }

    /// (alpha_t, sigma_t) with alpha^2 + sigma^2 = 1.
    LatentCoefficients coefficients(double t) const {
        return coefficients_from_ratio(ratio(t));
    }
};

} // namespace mcd
