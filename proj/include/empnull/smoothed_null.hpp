#pragma once

// Per-provider empirical nulls N(Zhat_i, sigma_i^2) as smooth functions of
// provider size, with the stratified empirical null as a special case, and
// flag decisions against either.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "empnull/math.hpp"
#include "empnull/null_mle.hpp"
#include "empnull/spline.hpp"
#include "empnull/types.hpp"

namespace empnull {

struct SizeGroup {
    int index = 0;
    std::vector<std::size_t> members;  // indices into the score vector
    double median_size = 0.0;          // m~_g
    double mean_z = 0.0;               // z~_g (robust)
    double var_z = 0.0;                // sigma~_g^2 (robust)
    double null_prop = 1.0;
    int count = 0;                     // N_g
};

struct VarianceLine {
    double gamma0 = 1.0;
    double gamma1 = 0.0;
    int iterations = 0;

    double raw(double size) const { return gamma0 + gamma1 * size; }
    // Floor at 1: a Z-score null variance cannot fall below the
    // within-provider sampling variance under correct standardization.
    double floored(double size) const { return std::max(raw(size), 1.0); }
};

struct MeanCurve {
    bool is_spline = false;
    SmoothingSpline spline;
    double lin_a = 0.0, lin_b = 0.0;
    double m_min = 0.0, m_max = 0.0;

    // Flat plateau beyond the fitted size range.
    double operator()(double size) const {
        const double t = std::clamp(size, m_min, m_max);
        return is_spline ? spline(t) : lin_a + lin_b * t;
    }
};

struct SmoothedNullModel {
    VarianceLine line;
    MeanCurve mean;
    std::vector<SizeGroup> groups;
    double m_min = 0.0, m_max = 0.0;
    bool linear_mean_fallback = false;
};

// Providers sorted by (size, provider_id) and split into G contiguous blocks
// as equal as possible. Robust stats left unfilled.
inline std::vector<SizeGroup> group_by_size(const std::vector<ProviderScore>& scores,
                                            int n_groups) {
    if (n_groups < 2) throw Error("group_by_size: need at least 2 groups");
    const std::size_t n = scores.size();
    if (n / static_cast<std::size_t>(n_groups) < 20)
        throw Error("group_by_size: too many groups for " + std::to_string(n) +
                    " providers");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a].size != scores[b].size) return scores[a].size < scores[b].size;
        return scores[a].provider_id < scores[b].provider_id;
    });

    const std::size_t base = n / static_cast<std::size_t>(n_groups);
    const std::size_t rem = n % static_cast<std::size_t>(n_groups);
    std::vector<SizeGroup> groups(static_cast<std::size_t>(n_groups));
    std::size_t pos = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::size_t len = base + (g < rem ? 1 : 0);
        SizeGroup& grp = groups[g];
        grp.index = static_cast<int>(g);
        grp.members.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                           order.begin() + static_cast<std::ptrdiff_t>(pos + len));
        grp.count = static_cast<int>(len);
        std::vector<double> sizes(len);
        for (std::size_t k = 0; k < len; ++k) sizes[k] = scores[grp.members[k]].size;
        grp.median_size = median(std::move(sizes));
        pos += len;
    }
    return groups;
}

// Default number of groups: aim for ~100 providers per group, clamped so
// each group holds between 50 and 300.
inline int default_group_count(std::size_t n_providers) {
    const double n = static_cast<double>(n_providers);
    long g = std::lround(n / 100.0);
    const long g_min = std::max<long>(2, static_cast<long>(std::ceil(n / 300.0)));
    const long g_max = std::max<long>(2, static_cast<long>(std::floor(n / 50.0)));
    g = std::clamp(g, g_min, g_max);
    return static_cast<int>(g);
}

inline void fit_group_nulls(std::vector<SizeGroup>& groups,
                            const std::vector<ProviderScore>& scores,
                            const MleFitConfig& cfg = {}) {
    for (SizeGroup& g : groups) {
        std::vector<double> z(g.members.size());
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = scores[g.members[k]].z_fe;
        try {
            const MleFitResult fit = mle_fit(z, cfg);
            g.mean_z = fit.params.mean;
            g.var_z = fit.params.sd * fit.params.sd;
            g.null_prop = fit.params.null_prop;
        } catch (const Error& e) {
            throw Error("group " + std::to_string(g.index) + ": " + e.what());
        }
    }
}

// Iteratively re-weighted linear regression of the group variances on the
// group median sizes, weights omega_g = N_g (g0 + g1 m~_g)^-2.
inline VarianceLine fit_variance_line(const std::vector<SizeGroup>& groups) {
    if (groups.size() < 3) throw Error("fit_variance_line: need at least 3 groups");
    const std::size_t n = groups.size();

    auto wls = [&groups, n](const std::vector<double>& w, double& a, double& b) {
        double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t g = 0; g < n; ++g) {
            const double x = groups[g].median_size;
            const double y = groups[g].var_z;
            sw += w[g];
            sx += w[g] * x;
            sy += w[g] * y;
            sxx += w[g] * x * x;
            sxy += w[g] * x * y;
        }
        const double det = sw * sxx - sx * sx;
        if (std::fabs(det) < 1e-12 * std::max(1.0, sw * sxx))
            throw Error("fit_variance_line: degenerate group sizes");
        b = (sw * sxy - sx * sy) / det;
        a = (sy - b * sx) / sw;
    };

    VarianceLine line;
    std::vector<double> w(n, 1.0);
    wls(w, line.gamma0, line.gamma1);  // OLS start

    bool converged = false;
    for (int it = 0; it < 100; ++it) {
        for (std::size_t g = 0; g < n; ++g) {
            double fitted = line.gamma0 + line.gamma1 * groups[g].median_size;
            if (std::fabs(fitted) < 1e-8) fitted = (fitted < 0.0) ? -1e-8 : 1e-8;
            w[g] = static_cast<double>(groups[g].count) / (fitted * fitted);
        }
        double a, b;
        wls(w, a, b);
        const bool done =
            std::fabs(a - line.gamma0) <= 1e-6 * (1.0 + std::fabs(line.gamma0)) &&
            std::fabs(b - line.gamma1) <= 1e-6 * (1.0 + std::fabs(line.gamma1));
        line.gamma0 = a;
        line.gamma1 = b;
        line.iterations = it + 1;
        if (done) {
            converged = true;
            break;
        }
    }
    if (!converged) throw Error("fit_variance_line: no convergence in 100 iterations");
    for (const SizeGroup& g : groups)
        if (line.raw(g.median_size) <= 0.0)
            throw Error("fit_variance_line: nonpositive fitted variance at group " +
                        std::to_string(g.index));
    return line;
}

// Weighted cubic smoothing spline through (m~_g, z~_g), weights proportional
// to 1/sigma^2(m~_g) from the variance line, smoothing parameter by GCV.
// Fewer than 4 groups fall back to a weighted linear fit.
inline MeanCurve fit_mean_curve(const std::vector<SizeGroup>& groups,
                                const VarianceLine& line,
                                bool* linear_fallback = nullptr) {
    if (groups.size() < 2) throw Error("fit_mean_curve: need at least 2 groups");

    // Knots must be strictly increasing; merge groups with tied medians.
    std::vector<double> x, y, w;
    for (const SizeGroup& g : groups) {
        const double wt = 1.0 / line.floored(g.median_size);
        if (!x.empty() && g.median_size == x.back()) {
            const double tot = w.back() + wt;
            y.back() = (y.back() * w.back() + g.mean_z * wt) / tot;
            w.back() = tot;
        } else {
            x.push_back(g.median_size);
            y.push_back(g.mean_z);
            w.push_back(wt);
        }
    }

    MeanCurve curve;
    curve.m_min = x.front();
    curve.m_max = x.back();
    if (x.size() < 4) {
        if (linear_fallback) *linear_fallback = true;
        if (x.size() == 1) {
            curve.lin_a = y[0];
            curve.lin_b = 0.0;
        } else {
            double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                sw += w[i];
                sx += w[i] * x[i];
                sy += w[i] * y[i];
                sxx += w[i] * x[i] * x[i];
                sxy += w[i] * x[i] * y[i];
            }
            const double det = sw * sxx - sx * sx;
            curve.lin_b = (sw * sxy - sx * sy) / det;
            curve.lin_a = (sy - curve.lin_b * sx) / sw;
        }
        return curve;
    }
    if (linear_fallback) *linear_fallback = false;
    curve.is_spline = true;
    curve.spline = SmoothingSpline::fit_gcv(x, y, w);
    return curve;
}

inline SmoothedNullModel fit_smoothed_null(const std::vector<ProviderScore>& scores,
                                           int n_groups = 0,
                                           const MleFitConfig& cfg = {}) {
    if (n_groups == 0) n_groups = default_group_count(scores.size());
    SmoothedNullModel model;
    model.groups = group_by_size(scores, n_groups);
    fit_group_nulls(model.groups, scores, cfg);
    model.line = fit_variance_line(model.groups);
    model.mean = fit_mean_curve(model.groups, model.line, &model.linear_mean_fallback);
    model.m_min = model.mean.m_min;
    model.m_max = model.mean.m_max;
    return model;
}

inline std::vector<NullParams> provider_nulls(const SmoothedNullModel& model,
                                              const std::vector<ProviderScore>& scores) {
    std::vector<NullParams> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i].mean = model.mean(scores[i].size);
        out[i].sd = std::sqrt(model.line.floored(scores[i].size));
        out[i].null_prop = 1.0;
    }
    return out;
}

// Piecewise-constant per-stratum nulls (the stratified EN of the plain
// approach); a single stratum is exactly mle_fit on all scores.
inline std::vector<NullParams> stratified_nulls(const std::vector<ProviderScore>& scores,
                                                int n_strata,
                                                const MleFitConfig& cfg = {},
                                                std::vector<SizeGroup>* out_groups = nullptr) {
    if (n_strata < 1) throw Error("stratified_nulls: need at least 1 stratum");
    std::vector<NullParams> out(scores.size());
    if (n_strata == 1) {
        std::vector<double> z(scores.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = scores[i].z_fe;
        const MleFitResult fit = mle_fit(z, cfg);
        for (auto& n : out) n = fit.params;
        return out;
    }
    std::vector<SizeGroup> groups = group_by_size(scores, n_strata);
    fit_group_nulls(groups, scores, cfg);
    for (const SizeGroup& g : groups)
        for (std::size_t idx : g.members) {
            out[idx].mean = g.mean_z;
            out[idx].sd = std::sqrt(g.var_z);
            out[idx].null_prop = g.null_prop;
        }
    if (out_groups) *out_groups = std::move(groups);
    return out;
}

// Flag decisions: worse iff z_fe strictly exceeds the upper threshold,
// better (two-sided only) iff strictly below the lower one.
inline std::vector<FlagReport> flag(const std::vector<ProviderScore>& scores,
                                    const std::vector<NullParams>& nulls, double rho,
                                    bool two_sided = false) {
    if (!(rho > 0.0 && rho < 0.5)) throw Error("flag: rho must lie in (0, 0.5)");
    if (nulls.size() != scores.size()) throw Error("flag: nulls/scores size mismatch");
    const double z_rho = norm_upper_quantile(rho);
    std::vector<FlagReport> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        FlagReport& r = out[i];
        r.provider_id = scores[i].provider_id;
        r.z_fe = scores[i].z_fe;
        r.null_mean = nulls[i].mean;
        r.null_sd_effective = nulls[i].sd;
        r.threshold_upper = nulls[i].mean + z_rho * nulls[i].sd;
        r.threshold_lower = nulls[i].mean - z_rho * nulls[i].sd;
        r.rho = rho;
        r.lambda = 1.0;
        if (r.z_fe > r.threshold_upper)
            r.decision = Decision::worse;
        else if (two_sided && r.z_fe < r.threshold_lower)
            r.decision = Decision::better;
        else
            r.decision = Decision::none;
    }
    return out;
}

}  // namespace empnull
