#pragma once

// Scalar distribution functions used across the library: standard normal
// pdf/cdf/quantile, log of the normal cdf, regularized incomplete gamma,
// and the chi-square survival function used by the statistical tests.
// Everything is double precision.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mcd {

inline constexpr double kSqrt2 = 1.4142135623730950488;
inline constexpr double kSqrtPi = 1.7724538509055160273;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double x) {
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

/// Standard normal CDF via erfc; absolute error a few ulps over the
/// whole double range.
inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / kSqrt2);
}

/// log(Phi(x)) without cancellation for x > 0.
inline double log_normal_cdf(double x) {
    if (x > 0.0) {
        return std::log1p(-0.5 * std::erfc(x / kSqrt2));
    }
    return std::log(0.5 * std::erfc(-x / kSqrt2));
}

/// Standard normal quantile, Wichura's AS 241 (PPND16), |rel err| < 1e-15.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    }
    static constexpr double a[8] = {
        3.3871328727963666080,    1.3314166789178437745e+2,
        1.9715909503065514427e+3, 1.3731693765509461125e+4,
        4.5921953931549871457e+4, 6.7265770927008700853e+4,
        3.3430575583588128105e+4, 2.5090809287301226727e+3};
    static constexpr double b[8] = {
        1.0,                      4.2313330701600911252e+1,
        6.8718700749205790830e+2, 5.3941960214247511077e+3,
        2.1213794301586595867e+4, 3.9307895800092710610e+4,
        2.8729085735721942674e+4, 5.2264952788528545610e+3};
    static constexpr double c[8] = {
        1.42343711074968357734,    4.63033784615654529590,
        5.76949722146069140550,    3.64784832476320460504,
        1.27045825245236838258,    2.41780725177450611770e-1,
        2.27238449892691845833e-2, 7.74545014278341407640e-4};
    static constexpr double d[8] = {
        1.0,                       2.05319162663775882187,
        1.67638483018380384940,    6.89767334985100004550e-1,
        1.48103976427480074590e-1, 1.51986665636164571966e-2,
        5.47593808499534494600e-4, 1.05075007164441684324e-9};
    static constexpr double e[8] = {
        6.65790464350110377720,    5.46378491116411436990,
        1.78482653991729133580,    2.96560571828504891230e-1,
        2.65321895265761230930e-2, 1.24266094738807843860e-3,
        2.71155556874348757815e-5, 2.01033439929228813265e-7};
    static constexpr double f[8] = {
        1.0,                       5.99832206555887937690e-1,
        1.36929880922735805310e-1, 1.48753612908506148525e-2,
        7.86869131145613259100e-4, 1.84631831751005468180e-5,
        1.42151175831644588870e-7, 2.04426310338993978564e-15};
    auto poly = [](const double (&cf)[8], double x) {
        double r = cf[7];
        for (int i = 6; i >= 0; --i) r = r * x + cf[i];
        return r;
    };
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q * poly(a, r) / poly(b, r);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double v;
    if (r <= 5.0) {
        r -= 1.6;
        v = poly(c, r) / poly(d, r);
    } else {
        r -= 5.0;
        v = poly(e, r) / poly(f, r);
    }
    return (q < 0.0) ? -v : v;
}

namespace detail {

// Regularized lower incomplete gamma P(a,x), series branch (x < a+1).
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a,x), continued fraction (x >= a+1).
inline double gamma_q_cf(double a, double x) {
    const double fpmin = std::numeric_limits<double>::min() / 1e-16;
    double b = x + 1.0 - a;
    double c = 1.0 / fpmin;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

} // namespace detail

/// Regularized lower incomplete gamma P(a,x).
inline double gamma_p(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_cf(a, x);
}

/// Survival function of the chi-square distribution with dof degrees.
inline double chi_square_sf(double stat, double dof) {
    if (stat <= 0.0) return 1.0;
    if (stat < dof + 1.0) return 1.0 - detail::gamma_p_series(0.5 * dof, 0.5 * stat);
    return detail::gamma_q_cf(0.5 * dof, 0.5 * stat);
}

/// log of the binomial pmf, via lgamma.
inline double binomial_log_pmf(long long k, long long n, double p) {
    if (k < 0 || k > n) return -std::numeric_limits<double>::infinity();
    const double lc = std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
                      std::lgamma(double(n - k) + 1.0);
    double lp = 0.0;
    if (k > 0) lp += double(k) * std::log(p);
    if (k < n) lp += double(n - k) * std::log1p(-p);
    if (p == 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    if (p == 1.0) return k == n ? 0.0 : -std::numeric_limits<double>::infinity();
    return lc + lp;
}

} // namespace mcd
