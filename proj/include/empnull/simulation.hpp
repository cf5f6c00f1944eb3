#pragma once

// Seeded scenario generators and the replication engine behind the
// flagging-probability curves and per-stratum flag-rate tables.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "empnull/lambda.hpp"
#include "empnull/linear.hpp"
#include "empnull/math.hpp"
#include "empnull/rng.hpp"
#include "empnull/smoothed_null.hpp"
#include "empnull/survival.hpp"
#include "empnull/types.hpp"

namespace empnull {

enum class ScenarioKind { linear_equal_n, linear_outliers, survival_smr };

inline const char* scenario_kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::linear_equal_n: return "linear_equal_n";
        case ScenarioKind::linear_outliers: return "linear_outliers";
        default: return "survival_smr";
    }
}

struct Scenario {
    ScenarioKind kind = ScenarioKind::linear_equal_n;
    int replications = 1000;
    std::uint64_t base_seed = 1;

    // linear designs
    int n_providers = 200;
    double mu = 0.0;
    double sigma_alpha = 1.0;
    double sigma_w = 4.0;
    int equal_n = 100;                 // linear_equal_n
    int provider1_n = 125;             // linear_outliers
    int size_lo = 10, size_hi = 150;   // linear_outliers
    double outlier_frac = 0.05;
    double outlier_mag = 4.0;          // in units of sigma_alpha
    std::vector<double> alpha1_grid;   // defaults to 0..3.5 step 0.25
    int en_groups = 0;                 // 0 = auto

    // survival design
    double base_hazard = 0.1;
    std::vector<double> beta_surv{1.0, -1.0};
    double alpha_sd_surv = 0.2;
    double censor_lo = 10.0, censor_hi = 30.0;
    int surv_size_lo = 10, surv_size_hi = 200;
    std::vector<double> lambdas{0.0, 0.5, 0.75, 1.0};
    int surv_groups = 20;
    int report_strata = 3;
    double min_expected = 3.0;

    std::vector<double> alpha_grid_or_default() const {
        if (!alpha1_grid.empty()) return alpha1_grid;
        std::vector<double> g;
        for (int k = 0; k <= 14; ++k) g.push_back(0.25 * k);
        return g;
    }
};

struct SignalCurve {
    std::string method;
    std::vector<double> alpha1;
    std::vector<double> prob;
    std::vector<double> se;
    int replications = 0;
};

struct StrataRate {
    std::string method;
    double lambda = 1.0;
    int stratum = 0;  // 0-based, increasing size
    double rate = 0.0;
    double se = 0.0;
};

struct SimulationResult {
    std::vector<SignalCurve> curves;
    std::vector<StrataRate> rates;
    long failed_replications = 0;
};

namespace detail {

inline std::string provider_name(std::size_t i) {
    return "P" + std::to_string(i + 1);
}

inline void parallel_for(long n, int jobs, const std::function<void(long)>& body) {
    if (jobs <= 1) {
        for (long i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<long> next{0};
    auto worker = [&]() {
        for (;;) {
            const long i = next.fetch_add(1);
            if (i >= n) return;
            body(i);
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Equal-size linear design: provider 1's effect fixed at alpha1, the rest
// drawn from N(0, sigma_alpha^2).
inline LinearDataset gen_linear_equal_n(const Scenario& sc, double alpha1,
                                        std::uint64_t seed) {
    Rng rng(seed);
    LinearDataset ds;
    ds.p = 0;
    const std::size_t n_prov = static_cast<std::size_t>(sc.n_providers);
    const std::size_t n = static_cast<std::size_t>(sc.equal_n);
    ds.y.reserve(n_prov * n);
    ds.provider_of.reserve(n_prov * n);
    for (std::size_t i = 0; i < n_prov; ++i) {
        const std::size_t idx = ds.providers.add(detail::provider_name(i));
        const double alpha = (i == 0) ? alpha1 : rng.normal(0.0, sc.sigma_alpha);
        for (std::size_t j = 0; j < n; ++j) {
            ds.provider_of.push_back(idx);
            ds.y.push_back(sc.mu + alpha + rng.normal(0.0, sc.sigma_w));
        }
    }
    return ds;
}

// Outlier design: random sizes, 5% of providers at +/- outlier_mag *
// sigma_alpha (split evenly), provider 1 at alpha1 with a fixed size.
inline LinearDataset gen_linear_outliers(const Scenario& sc, double alpha1,
                                         std::uint64_t seed) {
    Rng rng(seed);
    LinearDataset ds;
    ds.p = 0;
    const std::size_t n_prov = static_cast<std::size_t>(sc.n_providers);
    const std::size_t n_out =
        static_cast<std::size_t>(std::llround(sc.outlier_frac * static_cast<double>(n_prov)));
    const std::size_t half = n_out / 2;
    for (std::size_t i = 0; i < n_prov; ++i) {
        const std::size_t idx = ds.providers.add(detail::provider_name(i));
        const std::size_t n = (i == 0)
                                  ? static_cast<std::size_t>(sc.provider1_n)
                                  : static_cast<std::size_t>(
                                        rng.uniform_int(sc.size_lo, sc.size_hi));
        double alpha;
        if (i == 0)
            alpha = alpha1;
        else if (i <= half)
            alpha = sc.outlier_mag * sc.sigma_alpha;
        else if (i <= n_out)
            alpha = -sc.outlier_mag * sc.sigma_alpha;
        else
            alpha = rng.normal(0.0, sc.sigma_alpha);
        for (std::size_t j = 0; j < n; ++j) {
            ds.provider_of.push_back(idx);
            ds.y.push_back(sc.mu + alpha + rng.normal(0.0, sc.sigma_w));
        }
    }
    return ds;
}

// Provider sizes for the survival design, drawn once per scenario and fixed
// across replications.
inline std::vector<int> gen_survival_sizes(const Scenario& sc) {
    Rng rng(derive_seed(sc.base_seed, 0x73697a65u));  // dedicated size stream
    std::vector<int> sizes(static_cast<std::size_t>(sc.n_providers));
    for (auto& s : sizes)
        s = static_cast<int>(rng.uniform_int(sc.surv_size_lo, sc.surv_size_hi));
    return sizes;
}

// Exponential survival with hazard 0.1 exp(alpha_i + x1 b1 + x2 b2) and
// uniform censoring.
inline SurvivalDataset gen_survival(const Scenario& sc, const std::vector<int>& sizes,
                                    std::uint64_t seed) {
    Rng rng(seed);
    SurvivalDataset ds;
    ds.p = sc.beta_surv.size();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const std::size_t idx = ds.providers.add(detail::provider_name(i));
        const double alpha = rng.normal(0.0, sc.alpha_sd_surv);
        for (int j = 0; j < sizes[i]; ++j) {
            double eta = alpha;
            for (std::size_t k = 0; k < ds.p; ++k) {
                const double xk = rng.normal();
                ds.x.push_back(xk);
                eta += sc.beta_surv[k] * xk;
            }
            const double t = rng.exponential(sc.base_hazard * std::exp(eta));
            const double c = rng.uniform(sc.censor_lo, sc.censor_hi);
            ds.provider_of.push_back(idx);
            ds.time.push_back(std::min(t, c));
            ds.status.push_back(t <= c ? 1 : 0);
        }
    }
    return ds;
}

namespace detail {

struct LinearRepOutcome {
    bool ok = false;
    double z_fe = 0.0, z_re = 0.0, z_fere = 0.0;
    double en_mean = 0.0, en_sd = 1.0;            // fitted EN for provider 1
    double oracle_sd = 1.0;                        // known-parameter null sd
};

inline LinearRepOutcome linear_replication(const Scenario& sc, double alpha1,
                                           std::uint64_t seed) {
    LinearRepOutcome out;
    const LinearDataset ds = (sc.kind == ScenarioKind::linear_equal_n)
                                 ? gen_linear_equal_n(sc, alpha1, seed)
                                 : gen_linear_outliers(sc, alpha1, seed);
    const LinearVarianceComponents comps = estimate_variance_components(ds);
    const LinearScoreSet scores = compute_z_scores(ds, comps);
    out.z_fe = scores[0].z_fe;
    out.z_re = scores[0].z_re;
    out.z_fere = scores[0].z_fere;

    const double n1 = static_cast<double>(scores[0].n);
    out.oracle_sd = std::sqrt(1.0 + n1 * sc.sigma_alpha * sc.sigma_alpha /
                                        (sc.sigma_w * sc.sigma_w));

    const std::vector<ProviderScore> ps = to_provider_scores(scores);
    if (sc.kind == ScenarioKind::linear_equal_n) {
        std::vector<double> z(ps.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = ps[i].z_fe;
        const MleFitResult fit = mle_fit(z);
        out.en_mean = fit.params.mean;
        out.en_sd = fit.params.sd;
    } else {
        const SmoothedNullModel model = fit_smoothed_null(ps, sc.en_groups);
        out.en_mean = model.mean(ps[0].size);
        out.en_sd = std::sqrt(model.line.floored(ps[0].size));
    }
    out.ok = true;
    return out;
}

}  // namespace detail

// Replication engine. Linear scenarios produce signaling-probability curves
// for provider 1; the survival scenario produces per-stratum flag-rate
// tables across the lambda values.
inline SimulationResult run_replications(const Scenario& sc,
                                         const std::vector<std::string>& methods,
                                         double rho, int jobs = 1) {
    if (methods.empty()) throw Error("run_replications: no methods requested");
    SimulationResult result;
    const double z_rho = norm_upper_quantile(rho);

    if (sc.kind == ScenarioKind::survival_smr) {
        const std::vector<int> sizes = gen_survival_sizes(sc);
        const long reps = sc.replications;
        const std::size_t n_strata = static_cast<std::size_t>(sc.report_strata);
        const std::size_t n_lam = sc.lambdas.size();
        // per (rep, lambda, stratum) flag rate
        std::vector<double> cell(static_cast<std::size_t>(reps) * n_lam * n_strata, 0.0);
        std::vector<char> rep_ok(static_cast<std::size_t>(reps), 0);
        std::atomic<long> failures{0};

        detail::parallel_for(reps, jobs, [&](long r) {
            try {
                const std::uint64_t seed =
                    derive_seed(sc.base_seed, 2, static_cast<std::uint64_t>(r));
                const SurvivalDataset ds = gen_survival(sc, sizes, seed);
                const SmrPipelineResult smr = smr_pipeline(ds, sc.min_expected);
                const SmoothedNullModel model =
                    fit_smoothed_null(smr.scores, sc.surv_groups);
                const std::vector<NullParams> nulls = provider_nulls(model, smr.scores);
                // Report strata follow the design's patient counts, which are
                // fixed across replications; patient-years remain the size
                // measure inside the null model.
                std::vector<ProviderScore> strat_scores = smr.scores;
                {
                    std::unordered_map<std::string, int> count_of;
                    for (std::size_t i = 0; i < ds.n_providers(); ++i)
                        count_of.emplace(ds.providers.ids[i], sizes[i]);
                    for (auto& s : strat_scores)
                        s.size = static_cast<double>(count_of.at(s.provider_id));
                }
                const std::vector<SizeGroup> strata =
                    group_by_size(strat_scores, sc.report_strata);
                for (std::size_t li = 0; li < n_lam; ++li) {
                    // lambda = 0 is reported as the plain FE test (one-sided
                    // p < rho against N(0,1)); positive lambda relaxes the
                    // smoothed empirical null.
                    std::vector<FlagReport> flags;
                    if (sc.lambdas[li] > 0.0) {
                        LambdaConfig lc;
                        lc.prior = PointPrior{sc.lambdas[li]};
                        flags = flag_with_lambda(smr.scores, nulls, lc, rho);
                    }
                    for (std::size_t g = 0; g < n_strata; ++g) {
                        long flagged = 0;
                        for (std::size_t idx : strata[g].members) {
                            const bool worse =
                                sc.lambdas[li] > 0.0
                                    ? flags[idx].decision == Decision::worse
                                    : smr.scores[idx].z_fe > z_rho;
                            if (worse) ++flagged;
                        }
                        cell[(static_cast<std::size_t>(r) * n_lam + li) * n_strata + g] =
                            static_cast<double>(flagged) /
                            static_cast<double>(strata[g].members.size());
                    }
                }
                rep_ok[static_cast<std::size_t>(r)] = 1;
            } catch (const std::exception&) {
                failures.fetch_add(1);
            }
        });

        result.failed_replications = failures.load();
        for (std::size_t li = 0; li < n_lam; ++li) {
            for (std::size_t g = 0; g < n_strata; ++g) {
                double sum = 0.0, sum2 = 0.0;
                long n_ok = 0;
                for (long r = 0; r < reps; ++r) {
                    if (!rep_ok[static_cast<std::size_t>(r)]) continue;
                    const double v =
                        cell[(static_cast<std::size_t>(r) * n_lam + li) * n_strata + g];
                    sum += v;
                    sum2 += v * v;
                    ++n_ok;
                }
                StrataRate sr;
                sr.method = "EN_lambda";
                sr.lambda = sc.lambdas[li];
                sr.stratum = static_cast<int>(g);
                sr.rate = sum / static_cast<double>(n_ok);
                const double var =
                    (sum2 - sum * sum / static_cast<double>(n_ok)) /
                    std::max<double>(1.0, static_cast<double>(n_ok - 1));
                sr.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_ok));
                result.rates.push_back(sr);
            }
        }
        return result;
    }

    // linear scenarios: signal-probability curves for provider 1
    const std::vector<double> grid = sc.alpha_grid_or_default();
    const long reps = sc.replications;
    const long cells = static_cast<long>(grid.size()) * reps;
    std::vector<detail::LinearRepOutcome> outcomes(static_cast<std::size_t>(cells));
    std::atomic<long> failures{0};

    detail::parallel_for(cells, jobs, [&](long c) {
        const std::size_t a = static_cast<std::size_t>(c) / static_cast<std::size_t>(reps);
        const long r = c % reps;
        try {
            const std::uint64_t seed = derive_seed(
                sc.base_seed, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(r));
            outcomes[static_cast<std::size_t>(c)] =
                detail::linear_replication(sc, grid[a], seed);
        } catch (const std::exception&) {
            failures.fetch_add(1);
        }
    });
    result.failed_replications = failures.load();

    for (const std::string& method : methods) {
        SignalCurve curve;
        curve.method = method;
        curve.alpha1 = grid;
        curve.replications = static_cast<int>(reps);
        for (std::size_t a = 0; a < grid.size(); ++a) {
            long flagged = 0, n_ok = 0;
            for (long r = 0; r < reps; ++r) {
                const auto& o = outcomes[a * static_cast<std::size_t>(reps) +
                                         static_cast<std::size_t>(r)];
                if (!o.ok) continue;
                ++n_ok;
                bool hit = false;
                if (method == "FE")
                    hit = o.z_fe > z_rho;
                else if (method == "RE")
                    hit = o.z_re > z_rho;
                else if (method == "FERE")
                    hit = o.z_fere > z_rho;
                else if (method == "EN")
                    hit = o.z_fe > o.en_mean + z_rho * o.en_sd;
                else if (method == "EN_oracle")
                    hit = o.z_fe > z_rho * o.oracle_sd;
                else
                    throw Error("run_replications: unknown method " + method);
                if (hit) ++flagged;
            }
            const double p = static_cast<double>(flagged) / static_cast<double>(n_ok);
            curve.prob.push_back(p);
            curve.se.push_back(std::sqrt(p * (1.0 - p) / static_cast<double>(n_ok)));
        }
        result.curves.push_back(std::move(curve));
    }
    return result;
}

}  // namespace empnull
