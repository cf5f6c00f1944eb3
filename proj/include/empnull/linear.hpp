#pragma once

// Linear-model profiling: fixed-effects risk adjustment, one-way variance
// components, and the FE / RE / FERE Z-scores.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "empnull/math.hpp"
#include "empnull/types.hpp"

namespace empnull {

struct LinearScore {
    std::string provider_id;
    std::size_t n = 0;
    double ybar = 0.0;  // risk-adjusted provider mean
    double z_fe = 0.0;
    double z_re = 0.0;
    double z_fere = 0.0;
    double shrinkage = 0.0;  // R_i
};

using LinearScoreSet = std::vector<LinearScore>;

struct FixedEffectsFit {
    std::vector<double> beta;
    double sigma_w = 0.0;
};

namespace detail {

inline std::vector<double> provider_means(const LinearDataset& ds,
                                          const std::vector<double>& values) {
    std::vector<double> sum(ds.n_providers(), 0.0);
    std::vector<std::size_t> cnt(ds.n_providers(), 0);
    for (std::size_t r = 0; r < values.size(); ++r) {
        sum[ds.provider_of[r]] += values[r];
        ++cnt[ds.provider_of[r]];
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= static_cast<double>(cnt[i]);
    return sum;
}

}  // namespace detail

// Least-squares beta from the within-provider-centered regression (provider
// means absorbed), with sigma_w from the residual sum of squares on
// sum(n_i) - N - p degrees of freedom.
inline FixedEffectsFit fit_fixed_effects_beta(const LinearDataset& ds) {
    const std::size_t m = ds.n_records();
    const std::size_t n_prov = ds.n_providers();
    const std::size_t p = ds.p;
    if (m <= n_prov + p)
        throw Error("fit_fixed_effects_beta: total records must exceed N + p");

    const std::vector<double> ybar = detail::provider_means(ds, ds.y);
    std::vector<double> xbar(n_prov * std::max<std::size_t>(p, 1), 0.0);
    if (p > 0) {
        std::vector<std::size_t> cnt(n_prov, 0);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t i = ds.provider_of[r];
            ++cnt[i];
            for (std::size_t k = 0; k < p; ++k) xbar[i * p + k] += ds.covariate(r, k);
        }
        for (std::size_t i = 0; i < n_prov; ++i)
            for (std::size_t k = 0; k < p; ++k)
                xbar[i * p + k] /= static_cast<double>(cnt[i]);
    }

    FixedEffectsFit fit;
    fit.beta.assign(p, 0.0);
    double rss = 0.0;
    double yss = 0.0;
    if (p == 0) {
        for (std::size_t r = 0; r < m; ++r) {
            const double e = ds.y[r] - ybar[ds.provider_of[r]];
            rss += e * e;
        }
        yss = rss;
    } else {
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p),
                                                    static_cast<Eigen::Index>(p));
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        Eigen::VectorXd xc(static_cast<Eigen::Index>(p));
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t i = ds.provider_of[r];
            for (std::size_t k = 0; k < p; ++k)
                xc[static_cast<Eigen::Index>(k)] = ds.covariate(r, k) - xbar[i * p + k];
            const double yc = ds.y[r] - ybar[i];
            yss += yc * yc;
            xtx.noalias() += xc * xc.transpose();
            xty.noalias() += xc * yc;
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
        if (!lu.isInvertible())
            throw Error("fit_fixed_effects_beta: singular centered design matrix");
        const Eigen::VectorXd b = lu.solve(xty);
        for (std::size_t k = 0; k < p; ++k) fit.beta[k] = b[static_cast<Eigen::Index>(k)];
        rss = yss - xty.dot(b);
    }

    const double dof = static_cast<double>(m - n_prov - p);
    const double sigma2 = std::max(rss, 0.0) / dof;
    if (sigma2 <= 1e-12 * std::max(1.0, yss / dof))
        throw Error("fit_fixed_effects_beta: zero residual variance");
    fit.sigma_w = std::sqrt(sigma2);
    return fit;
}

// Y_ij = Y*_ij - beta' X_ij; provider structure preserved.
inline LinearDataset adjust_outcomes(const LinearDataset& ds,
                                     const std::vector<double>& beta) {
    if (beta.size() != ds.p)
        throw Error("adjust_outcomes: beta length does not match covariate dimension");
    LinearDataset out = ds;
    for (std::size_t r = 0; r < ds.n_records(); ++r) {
        double dot = 0.0;
        for (std::size_t k = 0; k < ds.p; ++k) dot += beta[k] * ds.covariate(r, k);
        out.y[r] = ds.y[r] - dot;
    }
    return out;
}

// One-way unbalanced ANOVA method of moments on the risk-adjusted outcomes:
// sigma_w^2 from the within mean square, sigma_alpha^2 from
// (MSB - MSW) / n0 truncated at zero, with
// n0 = (M - sum n_i^2 / M) / (N - 1).
inline LinearVarianceComponents estimate_variance_components(const LinearDataset& ds) {
    const std::size_t n_prov = ds.n_providers();
    if (n_prov < 2) throw Error("estimate_variance_components: need at least 2 providers");
    const std::size_t m = ds.n_records();
    if (m == n_prov)
        throw Error("estimate_variance_components: all providers have one record; "
                    "within variance not estimable");

    const std::vector<std::size_t> counts = ds.provider_counts();
    const std::vector<double> ybar = detail::provider_means(ds, ds.y);

    double grand = 0.0;
    for (std::size_t i = 0; i < n_prov; ++i)
        grand += static_cast<double>(counts[i]) * ybar[i];
    grand /= static_cast<double>(m);

    double ssw = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        const double e = ds.y[r] - ybar[ds.provider_of[r]];
        ssw += e * e;
    }
    double ssb = 0.0;
    double sum_n2 = 0.0;
    for (std::size_t i = 0; i < n_prov; ++i) {
        const double ni = static_cast<double>(counts[i]);
        ssb += ni * (ybar[i] - grand) * (ybar[i] - grand);
        sum_n2 += ni * ni;
    }
    const double msw = ssw / static_cast<double>(m - n_prov);
    const double msb = ssb / static_cast<double>(n_prov - 1);
    const double n0 = (static_cast<double>(m) - sum_n2 / static_cast<double>(m)) /
                      static_cast<double>(n_prov - 1);

    LinearVarianceComponents c;
    c.mu = grand;
    c.sigma_w = std::sqrt(msw);
    c.sigma_alpha = std::sqrt(std::max(0.0, (msb - msw) / n0));
    return c;
}

// z_fe = sqrt(n)(ybar - mu)/sigma_w; R = sa^2/(sa^2 + sw^2/n);
// z_re = sqrt(R) z_fe; z_fere = (ybar - mu)/sqrt(sa^2 + sw^2/n).
inline LinearScoreSet compute_z_scores(const LinearDataset& ds,
                                       const LinearVarianceComponents& c) {
    if (!(c.sigma_w > 0.0)) throw Error("compute_z_scores: sigma_w must be positive");
    const std::vector<std::size_t> counts = ds.provider_counts();
    const std::vector<double> ybar = detail::provider_means(ds, ds.y);
    const double sw2 = c.sigma_w * c.sigma_w;
    const double sa2 = c.sigma_alpha * c.sigma_alpha;

    LinearScoreSet out(ds.n_providers());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double n = static_cast<double>(counts[i]);
        const double dev = ybar[i] - c.mu;
        LinearScore& s = out[i];
        s.provider_id = ds.providers.ids[i];
        s.n = counts[i];
        s.ybar = ybar[i];
        s.z_fe = std::sqrt(n) * dev / c.sigma_w;
        s.shrinkage = sa2 / (sa2 + sw2 / n);
        s.z_re = std::sqrt(s.shrinkage) * s.z_fe;
        s.z_fere = dev / std::sqrt(sa2 + sw2 / n);
    }
    return out;
}

inline std::vector<ProviderScore> to_provider_scores(const LinearScoreSet& scores) {
    std::vector<ProviderScore> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i].provider_id = scores[i].provider_id;
        out[i].size = static_cast<double>(scores[i].n);
        out[i].z_fe = scores[i].z_fe;
    }
    return out;
}

struct MseCurves {
    std::vector<double> alpha;
    std::vector<double> mse_fe;  // sigma_w^2/n, constant in alpha
    std::vector<double> mse_re;  // R^2 sigma_w^2/n + (1-R)^2 alpha^2
};

// Conditional MSE of the FE and RE provider-effect estimates given alpha.
inline MseCurves conditional_mse_curves(const LinearVarianceComponents& c,
                                        double n, const std::vector<double>& alpha_grid) {
    const double sw2 = c.sigma_w * c.sigma_w;
    const double sa2 = c.sigma_alpha * c.sigma_alpha;
    const double fe = sw2 / n;
    const double r = sa2 / (sa2 + sw2 / n);
    MseCurves out;
    out.alpha = alpha_grid;
    out.mse_fe.assign(alpha_grid.size(), fe);
    out.mse_re.resize(alpha_grid.size());
    for (std::size_t k = 0; k < alpha_grid.size(); ++k) {
        const double a = alpha_grid[k];
        out.mse_re[k] = r * r * fe + (1.0 - r) * (1.0 - r) * a * a;
    }
    return out;
}

}  // namespace empnull
