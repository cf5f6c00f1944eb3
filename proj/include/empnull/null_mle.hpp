#pragma once

// Robust estimation of a single empirical null N(mu_M, sigma_M^2) and null
// proportion p_M from a set of Z-scores: Tukey biweight initialization, then
// maximization of the truncated mixture likelihood profiled over a grid of
// null proportions.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "empnull/math.hpp"
#include "empnull/types.hpp"

namespace empnull {

struct MleFitConfig {
    double zeta0 = 1.64;
    double p_lo = 0.5;
    double p_hi = 1.0;
    double p_step = 0.001;
    double tol = 1e-8;
    int max_iter = 500;
};

struct BiweightEstimate {
    double location = 0.0;
    double scale = 0.0;
    bool degenerate = false;
};

struct MleFitResult {
    NullParams params;
    double interval_a = 0.0;
    double interval_b = 0.0;
    int n0 = 0;
    int n1 = 0;
    double loglik = 0.0;
};

// Tukey biweight location M-estimate (tuning constant 4.685) with scale from
// the MAD about the current location, alternating location/scale updates.
inline BiweightEstimate biweight_initial(const std::vector<double>& z) {
    if (z.size() < 3) throw Error("biweight_initial: need at least 3 scores");
    constexpr double c = 4.685;
    constexpr double mad_to_sd = 1.0 / 0.6745;

    double mu = median(z);
    double s = mad(z, mu) * mad_to_sd;
    if (s == 0.0) return {mu, 0.0, true};

    for (int it = 0; it < 50; ++it) {
        double wsum = 0.0, wz = 0.0;
        for (double zi : z) {
            const double u = (zi - mu) / (c * s);
            if (std::fabs(u) < 1.0) {
                const double t = 1.0 - u * u;
                const double w = t * t;
                wsum += w;
                wz += w * zi;
            }
        }
        if (wsum == 0.0) break;
        const double mu_new = wz / wsum;
        const double s_new = mad(z, mu_new) * mad_to_sd;
        if (s_new == 0.0) return {mu_new, 0.0, true};
        const bool done = std::fabs(mu_new - mu) <= 1e-8 * (1.0 + std::fabs(mu)) &&
                          std::fabs(s_new - s) <= 1e-8 * s;
        mu = mu_new;
        s = s_new;
        if (done) break;
    }
    return {mu, s, false};
}

namespace detail {

// Sufficient statistics of the scores inside [A,B]; the truncated-mixture
// log likelihood depends on the data only through these.
struct TruncStats {
    double a = 0.0, b = 0.0;
    double n0 = 0.0, n1 = 0.0;
    double s1 = 0.0, s2 = 0.0;  // sum z, sum z^2 over scores inside [A,B]
};

inline TruncStats trunc_stats(const std::vector<double>& z, double a, double b) {
    TruncStats st;
    st.a = a;
    st.b = b;
    for (double zi : z) {
        if (zi >= a && zi <= b) {
            st.n0 += 1.0;
            st.s1 += zi;
            st.s2 += zi * zi;
        } else {
            st.n1 += 1.0;
        }
    }
    return st;
}

inline double trunc_loglik(const TruncStats& st, double mu, double sigma, double p) {
    const double inf = std::numeric_limits<double>::infinity();
    if (!(sigma > 0.0)) return -inf;
    const double q = norm_cdf((st.b - mu) / sigma) - norm_cdf((st.a - mu) / sigma);
    const double theta = p * q;
    double ll = 0.0;
    if (st.n0 > 0.0) {
        if (theta <= 0.0) return -inf;
        ll += st.n0 * std::log(theta);
    }
    if (st.n1 > 0.0) {
        if (theta >= 1.0) return -inf;
        ll += st.n1 * std::log1p(-theta);
    }
    // sum over I0 of log phi - log Q
    const double quad = st.s2 - 2.0 * mu * st.s1 + st.n0 * mu * mu;
    ll += -st.n0 * (std::log(sigma) + 0.5 * std::log(2.0 * pi)) -
          quad / (2.0 * sigma * sigma);
    if (st.n0 > 0.0) {
        if (q <= 0.0) return -inf;
        ll -= st.n0 * std::log(q);
    }
    return ll;
}

// Part of the log likelihood that depends on (mu, sigma) for fixed p:
// full loglik = n0 * log(p) + inner(mu, sigma; p).
inline double trunc_inner(const TruncStats& st, double mu, double sigma, double p) {
    const double inf = std::numeric_limits<double>::infinity();
    if (!(sigma > 0.0)) return -inf;
    const double q = norm_cdf((st.b - mu) / sigma) - norm_cdf((st.a - mu) / sigma);
    double ll = 0.0;
    if (st.n1 > 0.0) {
        const double theta = p * q;
        if (theta >= 1.0) return -inf;
        ll += st.n1 * std::log1p(-theta);
    }
    const double quad = st.s2 - 2.0 * mu * st.s1 + st.n0 * mu * mu;
    ll += -st.n0 * (std::log(sigma) + 0.5 * std::log(2.0 * pi)) -
          quad / (2.0 * sigma * sigma);
    return ll;
}

// Nelder-Mead maximization in two dimensions.
template <typename F>
inline std::pair<std::array<double, 2>, double>
nelder_mead_2d(F&& f, std::array<double, 2> start, std::array<double, 2> step,
               double tol, int max_iter) {
    struct Vertex {
        std::array<double, 2> x;
        double val;
    };
    std::array<Vertex, 3> s;
    s[0] = {start, f(start)};
    for (int k = 0; k < 2; ++k) {
        std::array<double, 2> x = start;
        x[static_cast<std::size_t>(k)] += step[static_cast<std::size_t>(k)];
        s[static_cast<std::size_t>(k) + 1] = {x, f(x)};
    }
    auto order = [&s]() {
        if (s[0].val < s[1].val) std::swap(s[0], s[1]);
        if (s[1].val < s[2].val) std::swap(s[1], s[2]);
        if (s[0].val < s[1].val) std::swap(s[0], s[1]);
    };
    order();  // s[0] best (largest), s[2] worst

    for (int it = 0; it < max_iter; ++it) {
        if (std::fabs(s[0].val - s[2].val) <= tol * (1.0 + std::fabs(s[0].val))) break;
        const std::array<double, 2> cen{0.5 * (s[0].x[0] + s[1].x[0]),
                                        0.5 * (s[0].x[1] + s[1].x[1])};
        auto point = [&cen, &s](double t) {
            return std::array<double, 2>{cen[0] + t * (cen[0] - s[2].x[0]),
                                         cen[1] + t * (cen[1] - s[2].x[1])};
        };
        const auto xr = point(1.0);
        const double fr = f(xr);
        if (fr > s[0].val) {
            const auto xe = point(2.0);
            const double fe = f(xe);
            s[2] = (fe > fr) ? Vertex{xe, fe} : Vertex{xr, fr};
        } else if (fr > s[1].val) {
            s[2] = {xr, fr};
        } else {
            const auto xc = point(fr > s[2].val ? 0.5 : -0.5);
            const double fc = f(xc);
            if (fc > std::max(fr, s[2].val)) {
                s[2] = {xc, fc};
            } else {
                for (int k = 1; k < 3; ++k) {
                    auto& v = s[static_cast<std::size_t>(k)];
                    v.x = {0.5 * (v.x[0] + s[0].x[0]), 0.5 * (v.x[1] + s[0].x[1])};
                    v.val = f(v.x);
                }
            }
        }
        order();
    }
    return {s[0].x, s[0].val};
}

}  // namespace detail

// Log of the truncated mixture likelihood; -inf encodes impossibility.
inline double truncated_mixture_loglik(const std::vector<double>& z, double mu,
                                       double sigma, double p, double a, double b) {
    if (!(sigma > 0.0)) throw Error("truncated_mixture_loglik: sigma must be positive");
    if (!(p > 0.0 && p <= 1.0))
        throw Error("truncated_mixture_loglik: p must lie in (0,1]");
    if (!(a < b)) throw Error("truncated_mixture_loglik: interval must satisfy A < B");
    return detail::trunc_loglik(detail::trunc_stats(z, a, b), mu, sigma, p);
}

// Profile-likelihood MLE of (mu_M, sigma_M, p_M). The inner 2-D maximization
// runs over (mu, log sigma) and is warm-started along the p grid; ties within
// 1e-10 resolve to the largest p.
inline MleFitResult mle_fit(const std::vector<double>& z, const MleFitConfig& cfg = {}) {
    if (z.size() < 20) throw Error("mle_fit: need at least 20 scores");
    if (!(cfg.zeta0 > 0.0)) throw Error("mle_fit: zeta0 must be positive");
    if (!(cfg.p_lo > 0.0 && cfg.p_lo <= cfg.p_hi && cfg.p_hi <= 1.0 && cfg.p_step > 0.0))
        throw Error("mle_fit: invalid p grid");

    const BiweightEstimate init = biweight_initial(z);
    if (init.degenerate) throw Error("mle_fit: degenerate scale");
    const double a = init.location - cfg.zeta0 * init.scale;
    const double b = init.location + cfg.zeta0 * init.scale;
    const detail::TruncStats st = detail::trunc_stats(z, a, b);
    if (st.n0 < 10.0) throw Error("mle_fit: fewer than 10 scores inside [A,B]");

    const std::array<double, 2> x_init{init.location, std::log(init.scale)};
    const std::array<double, 2> step{0.1 * init.scale, 0.1};

    const std::size_t n_grid =
        static_cast<std::size_t>(std::llround((cfg.p_hi - cfg.p_lo) / cfg.p_step)) + 1;

    std::vector<double> grid_ll(n_grid);
    std::vector<std::array<double, 2>> grid_x(n_grid);

    if (st.n1 == 0.0) {
        // The inner maximizer does not depend on p; profile loglik is
        // n0 log p + const, increasing in p.
        auto f = [&st](const std::array<double, 2>& x) {
            return detail::trunc_inner(st, x[0], std::exp(x[1]), 1.0);
        };
        auto [x_opt, inner] = detail::nelder_mead_2d(f, x_init, step, cfg.tol, cfg.max_iter);
        for (std::size_t k = 0; k < n_grid; ++k) {
            const double p = std::min(cfg.p_lo + static_cast<double>(k) * cfg.p_step,
                                      cfg.p_hi);
            grid_ll[k] = st.n0 * std::log(p) + inner;
            grid_x[k] = x_opt;
        }
    } else {
        std::array<double, 2> warm = x_init;
        for (std::size_t k = 0; k < n_grid; ++k) {
            const double p = std::min(cfg.p_lo + static_cast<double>(k) * cfg.p_step,
                                      cfg.p_hi);
            auto f = [&st, p](const std::array<double, 2>& x) {
                return detail::trunc_inner(st, x[0], std::exp(x[1]), p);
            };
            const bool cold = k == 0 || f(x_init) > f(warm);
            // A warm start sits near the optimum of the neighbouring grid
            // point, so a small initial simplex converges in far fewer
            // evaluations than the cold one.
            const std::array<double, 2> start = cold ? x_init : warm;
            const std::array<double, 2> sim =
                cold ? step : std::array<double, 2>{0.02 * init.scale, 0.02};
            auto [x_opt, inner] =
                detail::nelder_mead_2d(f, start, sim, cfg.tol, cfg.max_iter);
            grid_ll[k] = st.n0 * std::log(p) + inner;
            grid_x[k] = x_opt;
            warm = x_opt;
        }
    }

    double best = -std::numeric_limits<double>::infinity();
    for (double v : grid_ll) best = std::max(best, v);
    std::size_t pick = 0;
    for (std::size_t k = 0; k < n_grid; ++k)
        if (grid_ll[k] >= best - 1e-10) pick = k;  // largest p within the tie band

    MleFitResult res;
    res.params.mean = grid_x[pick][0];
    res.params.sd = std::exp(grid_x[pick][1]);
    res.params.null_prop =
        std::min(cfg.p_lo + static_cast<double>(pick) * cfg.p_step, cfg.p_hi);
    res.interval_a = a;
    res.interval_b = b;
    res.n0 = static_cast<int>(st.n0);
    res.n1 = static_cast<int>(st.n1);
    res.loglik = grid_ll[pick];
    return res;
}

}  // namespace empnull
