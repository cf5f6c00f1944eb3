#pragma once

// Two-stage SMR pipeline: stratified Cox estimation of beta, Breslow baseline
// with the fitted linear predictor as offset, expected events, SMR, and
// mid-p FE Z-scores.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "empnull/math.hpp"
#include "empnull/types.hpp"

namespace empnull {

struct CoxFit {
    std::vector<double> beta;
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct BaselineHazard {
    std::vector<double> times;       // distinct event times, increasing
    std::vector<double> increments;  // dLambda0 at each event time
    std::vector<double> cumulative_; // prefix sums

    void finalize() {
        cumulative_.resize(times.size());
        double c = 0.0;
        for (std::size_t k = 0; k < times.size(); ++k) {
            c += increments[k];
            cumulative_[k] = c;
        }
    }
    // Lambda0(t): sum of increments at event times <= t.
    double cumulative(double t) const {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return 0.0;
        return cumulative_[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

struct SmrScore {
    std::string provider_id;
    long observed = 0;       // O_i
    double expected = 0.0;   // E_i
    double smr = 0.0;
    double mid_p = 0.5;
    double z_fe = 0.0;
    double patient_years = 0.0;
};

namespace detail {

struct StratumOrder {
    std::vector<std::vector<std::size_t>> by_stratum;  // record indices, time descending
};

inline StratumOrder stratum_order(const SurvivalDataset& ds) {
    StratumOrder so;
    so.by_stratum.resize(ds.n_providers());
    for (std::size_t r = 0; r < ds.n_records(); ++r)
        so.by_stratum[ds.provider_of[r]].push_back(r);
    for (auto& idx : so.by_stratum)
        std::sort(idx.begin(), idx.end(), [&ds](std::size_t a, std::size_t b) {
            return ds.time[a] > ds.time[b];
        });
    return so;
}

// Stratified Breslow partial log likelihood with gradient and information.
inline double cox_loglik(const SurvivalDataset& ds, const StratumOrder& so,
                         const Eigen::VectorXd& beta, Eigen::VectorXd* grad,
                         Eigen::MatrixXd* info) {
    const Eigen::Index p = beta.size();
    double ll = 0.0;
    if (grad) grad->setZero();
    if (info) info->setZero();
    Eigen::VectorXd s1(p), xr(p), xbar(p), xsum(p);
    Eigen::MatrixXd s2(p, p);
    for (const auto& idx : so.by_stratum) {
        double s0 = 0.0;
        s1.setZero();
        s2.setZero();
        std::size_t k = 0;
        while (k < idx.size()) {
            const double t = ds.time[idx[k]];
            // add everyone tied at this time to the risk set
            std::size_t k2 = k;
            int d = 0;
            double eta_events = 0.0;
            xsum.setZero();
            while (k2 < idx.size() && ds.time[idx[k2]] == t) {
                const std::size_t r = idx[k2];
                double eta = 0.0;
                for (Eigen::Index j = 0; j < p; ++j) {
                    xr[j] = ds.covariate(r, static_cast<std::size_t>(j));
                    eta += beta[j] * xr[j];
                }
                const double w = std::exp(eta);
                s0 += w;
                if (p > 0) {
                    s1.noalias() += w * xr;
                    if (info) s2.noalias() += w * xr * xr.transpose();
                }
                if (ds.status[r] == 1) {
                    ++d;
                    eta_events += eta;
                    if (p > 0) xsum.noalias() += xr;
                }
                ++k2;
            }
            if (d > 0) {
                ll += eta_events - static_cast<double>(d) * std::log(s0);
                if (p > 0 && grad) {
                    xbar = s1 / s0;
                    grad->noalias() += xsum - static_cast<double>(d) * xbar;
                    if (info)
                        info->noalias() += static_cast<double>(d) *
                                           (s2 / s0 - xbar * xbar.transpose());
                }
            }
            k = k2;
        }
    }
    return ll;
}

}  // namespace detail

// Newton-Raphson with step-halving on the stratified (by provider) partial
// likelihood, Breslow tie handling.
inline CoxFit fit_stratified_cox(const SurvivalDataset& ds) {
    long total_events = 0;
    std::vector<char> stratum_has_event(ds.n_providers(), 0);
    for (std::size_t r = 0; r < ds.n_records(); ++r)
        if (ds.status[r] == 1) {
            ++total_events;
            stratum_has_event[ds.provider_of[r]] = 1;
        }
    if (total_events == 0) throw Error("fit_stratified_cox: no events");
    const long strata_with_events =
        std::count(stratum_has_event.begin(), stratum_has_event.end(), char(1));
    if (ds.p > 0 && strata_with_events < 2)
        throw Error("fit_stratified_cox: need events in at least 2 strata");

    const detail::StratumOrder so = detail::stratum_order(ds);
    const Eigen::Index p = static_cast<Eigen::Index>(ds.p);

    CoxFit fit;
    fit.beta.assign(ds.p, 0.0);
    if (p == 0) {
        fit.loglik = detail::cox_loglik(ds, so, Eigen::VectorXd(0), nullptr, nullptr);
        fit.converged = true;
        return fit;
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd grad(p);
    Eigen::MatrixXd info(p, p);
    double ll = detail::cox_loglik(ds, so, beta, &grad, &info);

    for (int it = 1; it <= 50; ++it) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success)
            throw Error("fit_stratified_cox: singular information matrix "
                        "(constant covariates within strata?)");
        const Eigen::VectorXd dir = ldlt.solve(grad);
        // Predicted likelihood gain of the Newton step. Near the optimum of a
        // large dataset the realized delta and the raw gradient both sit on a
        // rounding floor, so convergence is judged on this quadratic model.
        const double predicted_gain = 0.5 * grad.dot(dir);
        if (grad.lpNorm<Eigen::Infinity>() < 1e-6 ||
            std::fabs(predicted_gain) < 1e-10) {
            fit.converged = true;
            break;
        }
        double step = 1.0;
        Eigen::VectorXd beta_new;
        double ll_new = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < 20; ++h) {
            beta_new = beta + step * dir;
            ll_new = detail::cox_loglik(ds, so, beta_new, nullptr, nullptr);
            if (ll_new >= ll - 1e-12) break;
            step *= 0.5;
        }
        beta = beta_new;
        ll = ll_new;
        if (beta.norm() > 50.0)
            throw Error("fit_stratified_cox: monotone likelihood (divergent beta)");
        detail::cox_loglik(ds, so, beta, &grad, &info);
        fit.iterations = it;
    }
    if (!fit.converged) throw Error("fit_stratified_cox: no convergence in 50 iterations");
    for (Eigen::Index j = 0; j < p; ++j) fit.beta[static_cast<std::size_t>(j)] = beta[j];
    fit.loglik = ll;
    return fit;
}

// Breslow estimator at the offset beta'X: dLambda0(t_k) = d_k / sum over the
// risk set of exp(beta'X). No parameters are fitted here; beta enters solely
// as the offset.
inline BaselineHazard breslow_baseline_with_offset(const SurvivalDataset& ds,
                                                   const std::vector<double>& beta) {
    if (beta.size() != ds.p)
        throw Error("breslow_baseline_with_offset: beta length mismatch");
    const std::size_t m = ds.n_records();
    std::vector<double> risk(m);
    for (std::size_t r = 0; r < m; ++r) {
        double eta = 0.0;
        for (std::size_t k = 0; k < ds.p; ++k) eta += beta[k] * ds.covariate(r, k);
        risk[r] = std::exp(eta);
        if (!std::isfinite(risk[r]))
            throw Error("breslow_baseline_with_offset: non-finite risk score");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&ds](std::size_t a, std::size_t b) { return ds.time[a] > ds.time[b]; });

    BaselineHazard bh;
    double at_risk = 0.0;
    std::size_t k = 0;
    while (k < m) {
        const double t = ds.time[order[k]];
        int d = 0;
        while (k < m && ds.time[order[k]] == t) {
            at_risk += risk[order[k]];
            if (ds.status[order[k]] == 1) ++d;
            ++k;
        }
        if (d > 0) {
            bh.times.push_back(t);
            bh.increments.push_back(static_cast<double>(d) / at_risk);
        }
    }
    std::reverse(bh.times.begin(), bh.times.end());
    std::reverse(bh.increments.begin(), bh.increments.end());
    bh.finalize();
    return bh;
}

struct ExpectedEvents {
    std::vector<double> per_patient;   // E_ij, record order
    std::vector<double> per_provider;  // E_i, provider index order
};

// E_ij = exp(beta'X_ij) * Lambda0(T_ij); E_i sums over the provider's
// patients. The total equals the observed event count (compensator identity).
inline ExpectedEvents expected_events(const SurvivalDataset& ds,
                                      const std::vector<double>& beta,
                                      const BaselineHazard& baseline) {
    ExpectedEvents out;
    out.per_patient.resize(ds.n_records());
    out.per_provider.assign(ds.n_providers(), 0.0);
    for (std::size_t r = 0; r < ds.n_records(); ++r) {
        double eta = 0.0;
        for (std::size_t k = 0; k < ds.p; ++k) eta += beta[k] * ds.covariate(r, k);
        const double e = std::exp(eta) * baseline.cumulative(ds.time[r]);
        out.per_patient[r] = e;
        out.per_provider[ds.provider_of[r]] += e;
    }
    return out;
}

// One-sided mid p-value P(X = O)/2 + P(X > O) under Poisson(E), and the
// Z-score conversion z = Phi^{-1}(1 - p). Tails are accumulated on the side
// that stays numerically small; p is clamped to [1e-12, 1 - 1e-12].
inline std::pair<double, double> midp_z(long o, double e) {
    if (o < 0) throw Error("midp_z: negative observed count");
    if (!(e > 0.0)) throw Error("midp_z: expected count must be positive");

    auto log_pmf = [e](long k) {
        return -e + static_cast<double>(k) * std::log(e) -
               std::lgamma(static_cast<double>(k) + 1.0);
    };

    double p;
    if (static_cast<double>(o) <= e) {
        // p = 1 - P(X <= o-1) - pmf(o)/2; the lower tail is the small side.
        double lower = 0.0;
        for (long k = 0; k < o; ++k) lower += std::exp(log_pmf(k));
        p = 1.0 - lower - 0.5 * std::exp(log_pmf(o));
    } else {
        // upper tail directly; terms decay since k > E
        const double pmf_o = std::exp(log_pmf(o));
        double term = std::exp(log_pmf(o + 1));
        double tail = 0.0;
        long k = o + 1;
        while (term > 0.0 && k < o + 2000000) {
            tail += term;
            ++k;
            term *= e / static_cast<double>(k);
            if (term < tail * 1e-18) break;
        }
        p = 0.5 * pmf_o + tail;
    }
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    const double z = -norm_quantile(p);
    return {p, z};
}

struct SmrPipelineResult {
    CoxFit cox;
    std::vector<SmrScore> smr;          // providers passing the inclusion rule
    std::vector<ProviderScore> scores;  // same providers; size = patient-years
    std::size_t n_excluded = 0;
};

// Full two-stage pipeline; providers with E_i below min_expected are
// excluded from profiling.
inline SmrPipelineResult smr_pipeline(const SurvivalDataset& ds,
                                      double min_expected = 3.0) {
    SmrPipelineResult out;
    out.cox = fit_stratified_cox(ds);
    const BaselineHazard bh = breslow_baseline_with_offset(ds, out.cox.beta);
    const ExpectedEvents ee = expected_events(ds, out.cox.beta, bh);

    std::vector<long> observed(ds.n_providers(), 0);
    std::vector<double> years(ds.n_providers(), 0.0);
    for (std::size_t r = 0; r < ds.n_records(); ++r) {
        if (ds.status[r] == 1) ++observed[ds.provider_of[r]];
        years[ds.provider_of[r]] += ds.time[r];
    }

    for (std::size_t i = 0; i < ds.n_providers(); ++i) {
        if (ee.per_provider[i] < min_expected) {
            ++out.n_excluded;
            continue;
        }
        SmrScore s;
        s.provider_id = ds.providers.ids[i];
        s.observed = observed[i];
        s.expected = ee.per_provider[i];
        s.smr = static_cast<double>(s.observed) / s.expected;
        std::tie(s.mid_p, s.z_fe) = midp_z(s.observed, s.expected);
        s.patient_years = years[i];
        out.smr.push_back(s);

        ProviderScore ps;
        ps.provider_id = s.provider_id;
        ps.size = s.patient_years;
        ps.z_fe = s.z_fe;
        ps.observed = static_cast<double>(s.observed);
        ps.expected = s.expected;
        out.scores.push_back(ps);
    }
    return out;
}

}  // namespace empnull
