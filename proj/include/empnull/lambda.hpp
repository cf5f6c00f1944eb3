#pragma once

// Accountability-fraction relaxation: inter-unit reliability, the relaxed
// reference variance sigma^2_{lambda,i}, and the Monte Carlo marginal null
// under a prior on lambda.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "empnull/math.hpp"
#include "empnull/rng.hpp"
#include "empnull/smoothed_null.hpp"
#include "empnull/types.hpp"

namespace empnull {

struct PointPrior {
    double lambda = 1.0;
};
struct BetaPrior {
    double a = 1.0, b = 1.0;
};
// Density tabulated on a [0,1] grid; sampled by inverse CDF.
struct TabulatedPrior {
    std::vector<double> grid;     // increasing, within [0,1]
    std::vector<double> density;  // nonnegative
};

using LambdaPrior = std::variant<PointPrior, BetaPrior, TabulatedPrior>;

struct LambdaConfig {
    LambdaPrior prior = PointPrior{1.0};
    long mc_draws = 100000;
    std::uint64_t seed = 0;
};

inline double prior_mean(const LambdaPrior& prior) {
    if (const auto* pt = std::get_if<PointPrior>(&prior)) return pt->lambda;
    if (const auto* be = std::get_if<BetaPrior>(&prior)) return be->a / (be->a + be->b);
    const auto& tab = std::get<TabulatedPrior>(prior);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k + 1 < tab.grid.size(); ++k) {
        const double h = tab.grid[k + 1] - tab.grid[k];
        const double mass = 0.5 * (tab.density[k] + tab.density[k + 1]) * h;
        num += mass * 0.5 * (tab.grid[k] + tab.grid[k + 1]);
        den += mass;
    }
    return num / den;
}

inline double sample_lambda(const LambdaPrior& prior, Rng& rng) {
    if (const auto* pt = std::get_if<PointPrior>(&prior)) return pt->lambda;
    if (const auto* be = std::get_if<BetaPrior>(&prior)) {
        const double x = rng.gamma(be->a, 1.0);
        const double y = rng.gamma(be->b, 1.0);
        return x / (x + y);
    }
    // inverse CDF on the tabulated grid (piecewise linear CDF)
    const auto& tab = std::get<TabulatedPrior>(prior);
    std::vector<double> cdf(tab.grid.size(), 0.0);
    for (std::size_t k = 1; k < tab.grid.size(); ++k)
        cdf[k] = cdf[k - 1] + 0.5 * (tab.density[k - 1] + tab.density[k]) *
                                  (tab.grid[k] - tab.grid[k - 1]);
    const double u = rng.uniform() * cdf.back();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(it - cdf.begin()));
    const double frac = (u - cdf[k - 1]) / std::max(cdf[k] - cdf[k - 1], 1e-300);
    return tab.grid[k - 1] + frac * (tab.grid[k] - tab.grid[k - 1]);
}

// r_i = sigma_alpha^2 / (sigma_alpha^2 + sigma_w^2 / n_i)
inline double iur_linear(const LinearVarianceComponents& c, double n) {
    if (!(c.sigma_w > 0.0)) throw Error("iur_linear: sigma_w must be positive");
    const double sa2 = c.sigma_alpha * c.sigma_alpha;
    const double sw2 = c.sigma_w * c.sigma_w;
    return sa2 / (sa2 + sw2 / n);
}

// Inversion of sigma^2 ~ 1/(1-r) for Wald-type scores; clipped to [0, 1-1e-6].
inline double iur_from_null_variance(double sigma2) {
    if (!(sigma2 >= 1.0))
        throw Error("iur_from_null_variance: variance must be >= 1 (floored upstream)");
    return std::clamp(1.0 - 1.0 / sigma2, 0.0, 1.0 - 1e-6);
}

// sigma^2_{lambda,i} = [1 - r (1 - lambda)] sigma^2
inline double relaxed_variance(double sigma2, double r, double lambda) {
    return (1.0 - r * (1.0 - lambda)) * sigma2;
}

// Empirical upper-rho quantile of the marginal null: lambda ~ prior, then
// z ~ N(mean, sigma^2_lambda).
inline double marginal_null_quantile(const NullParams& null, double r,
                                     const LambdaPrior& prior, double rho, long draws,
                                     std::uint64_t seed) {
    if (draws < 1000) throw Error("marginal_null_quantile: need at least 1000 draws");
    const double sigma2 = null.sd * null.sd;
    Rng rng(derive_seed(seed, 0x6d61726au));
    std::vector<double> z(static_cast<std::size_t>(draws));
    for (auto& zi : z) {
        const double lam = sample_lambda(prior, rng);
        zi = rng.normal(null.mean, std::sqrt(relaxed_variance(sigma2, r, lam)));
    }
    const std::size_t k = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(draws) - 1.0,
                         std::ceil((1.0 - rho) * static_cast<double>(draws)) - 1.0));
    std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(k), z.end());
    return z[k];
}

// Flagging with the relaxed reference: a fixed lambda shifts the critical
// value analytically; a prior uses the Monte Carlo marginal quantile.
inline std::vector<FlagReport> flag_with_lambda(const std::vector<ProviderScore>& scores,
                                                const std::vector<NullParams>& nulls,
                                                const LambdaConfig& cfg, double rho,
                                                bool two_sided = false) {
    if (nulls.size() != scores.size())
        throw Error("flag_with_lambda: nulls/scores size mismatch");
    if (!(rho > 0.0 && rho < 0.5)) throw Error("flag_with_lambda: rho must lie in (0, 0.5)");
    const double z_rho = norm_upper_quantile(rho);
    const double lam_mean = prior_mean(cfg.prior);
    const bool fixed = std::holds_alternative<PointPrior>(cfg.prior);

    std::vector<FlagReport> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double sigma2 = nulls[i].sd * nulls[i].sd;
        const double r = iur_from_null_variance(std::max(sigma2, 1.0));
        FlagReport& f = out[i];
        f.provider_id = scores[i].provider_id;
        f.z_fe = scores[i].z_fe;
        f.null_mean = nulls[i].mean;
        f.rho = rho;
        f.lambda = lam_mean;
        if (fixed) {
            const double sd_eff = std::sqrt(relaxed_variance(sigma2, r, lam_mean));
            f.null_sd_effective = sd_eff;
            f.threshold_upper = nulls[i].mean + z_rho * sd_eff;
            f.threshold_lower = nulls[i].mean - z_rho * sd_eff;
        } else {
            // marginal variance equals the relaxed variance at the prior mean
            f.null_sd_effective = std::sqrt(relaxed_variance(sigma2, r, lam_mean));
            const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
            f.threshold_upper =
                marginal_null_quantile(nulls[i], r, cfg.prior, rho, cfg.mc_draws, s);
            const double lower_q = marginal_null_quantile(
                {-nulls[i].mean, nulls[i].sd, nulls[i].null_prop}, r, cfg.prior, rho,
                cfg.mc_draws, derive_seed(s, 1));
            f.threshold_lower = -lower_q;
        }
        if (f.z_fe > f.threshold_upper)
            f.decision = Decision::worse;
        else if (two_sided && f.z_fe < f.threshold_lower)
            f.decision = Decision::better;
        else
            f.decision = Decision::none;
    }
    return out;
}

}  // namespace empnull
