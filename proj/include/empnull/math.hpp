#pragma once

// Basic statistical functions shared across the library: normal
// density/CDF/quantile, robust summaries, simple aggregates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace empnull {

inline constexpr double pi = 3.14159265358979323846;

inline double norm_pdf(double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * pi);
}

inline double norm_log_pdf(double z) {
    return -0.5 * z * z - 0.5 * std::log(2.0 * pi);
}

inline double norm_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Upper tail P(Z > z).
inline double norm_sf(double z) {
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

// Inverse standard normal CDF, Wichura's algorithm AS 241 (double precision).
inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw std::domain_error("norm_quantile: p outside [0,1]");
    }
    const double q = p - 0.5;
    double r;
    if (std::fabs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                     6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                   1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                 1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                     3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                   5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                 4.2313330701600911252e1) * r + 1.0);
    }
    r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -val : val;
}

// Upper-rho quantile of the standard normal, z_rho.
inline double norm_upper_quantile(double rho) {
    return norm_quantile(1.0 - rho);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sample variance (denominator n-1).
inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_variance: need >= 2 values");
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty vector");
    const std::size_t n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    double hi = *mid;
    double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

// Median absolute deviation about a given center (unscaled).
inline double mad(const std::vector<double>& v, double center) {
    std::vector<double> dev(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::fabs(v[i] - center);
    return median(std::move(dev));
}

}  // namespace empnull
