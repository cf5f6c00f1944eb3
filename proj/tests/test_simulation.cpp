#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "empnull/simulation.hpp"

using namespace empnull;

TEST_CASE("equal-size generator: structure and determinism") {
    Scenario sc;
    sc.kind = ScenarioKind::linear_equal_n;
    sc.n_providers = 50;
    sc.equal_n = 30;
    const auto a = gen_linear_equal_n(sc, 2.0, 99);
    const auto b = gen_linear_equal_n(sc, 2.0, 99);
    const auto c = gen_linear_equal_n(sc, 2.0, 100);
    CHECK(a.y == b.y);  // bit-identical for the same seed
    CHECK(a.y != c.y);
    CHECK(a.n_providers() == 50);
    CHECK(a.n_records() == 50 * 30);
    for (std::size_t cnt : a.provider_counts()) CHECK(cnt == 30);
    CHECK(a.providers.ids[0] == "P1");

    // provider 1 carries the fixed effect alpha1
    double m1 = 0.0;
    for (std::size_t r = 0; r < 30; ++r) m1 += a.y[r];
    m1 /= 30.0;
    CHECK(m1 == Catch::Approx(2.0).margin(4.0 * 4.0 / std::sqrt(30.0)));
}

TEST_CASE("outlier generator: sizes, outlier count and split") {
    Scenario sc;
    sc.kind = ScenarioKind::linear_outliers;
    sc.n_providers = 200;
    sc.provider1_n = 125;
    sc.sigma_alpha = 1.0;
    sc.sigma_w = 4.0;
    const auto ds = gen_linear_outliers(sc, 0.0, 7);
    const auto counts = ds.provider_counts();
    CHECK(counts[0] == 125);
    for (std::size_t i = 1; i < counts.size(); ++i) {
        CHECK(counts[i] >= 10);
        CHECK(counts[i] <= 150);
    }
    // 5% of 200 = 10 outliers: providers 2..6 at +4, 7..11 at -4
    std::vector<double> means(ds.n_providers(), 0.0);
    for (std::size_t r = 0; r < ds.n_records(); ++r) means[ds.provider_of[r]] += ds.y[r];
    for (std::size_t i = 0; i < means.size(); ++i)
        means[i] /= static_cast<double>(counts[i]);
    double pos = 0.0, neg = 0.0;
    for (std::size_t i = 1; i <= 5; ++i) pos += means[i];
    for (std::size_t i = 6; i <= 10; ++i) neg += means[i];
    CHECK(pos / 5.0 == Catch::Approx(4.0).margin(1.5));
    CHECK(neg / 5.0 == Catch::Approx(-4.0).margin(1.5));
}

TEST_CASE("survival sizes are drawn once per scenario and bounded") {
    Scenario sc;
    sc.kind = ScenarioKind::survival_smr;
    sc.n_providers = 100;
    const auto s1 = gen_survival_sizes(sc);
    const auto s2 = gen_survival_sizes(sc);
    CHECK(s1 == s2);
    for (int s : s1) {
        CHECK(s >= sc.surv_size_lo);
        CHECK(s <= sc.surv_size_hi);
    }
    sc.base_seed = 2;
    CHECK(gen_survival_sizes(sc) != s1);
}

TEST_CASE("survival generator: determinism and censoring fraction") {
    Scenario sc;
    sc.kind = ScenarioKind::survival_smr;
    sc.n_providers = 200;
    const auto sizes = gen_survival_sizes(sc);
    const auto a = gen_survival(sc, sizes, 404);
    const auto b = gen_survival(sc, sizes, 404);
    CHECK(a.time == b.time);
    CHECK(a.status == b.status);
    CHECK(a.p == 2);
    const long events = std::accumulate(a.status.begin(), a.status.end(), 0L);
    const double censored = 1.0 - static_cast<double>(events) /
                                      static_cast<double>(a.n_records());
    CHECK(censored == Catch::Approx(0.27).margin(0.03));
    for (double t : a.time) {
        CHECK(t > 0.0);
        CHECK(t <= sc.censor_hi);
    }
}

TEST_CASE("linear replication engine: calibration, ordering, reproducibility") {
    Scenario sc;
    sc.kind = ScenarioKind::linear_equal_n;
    sc.replications = 80;
    sc.base_seed = 31;
    sc.alpha1_grid = {0.0, 3.5};
    const std::vector<std::string> methods{"FE", "RE", "FERE", "EN", "EN_oracle"};
    const auto res = run_replications(sc, methods, 0.05);
    CHECK(res.failed_replications == 0);
    REQUIRE(res.curves.size() == methods.size());
    for (const auto& c : res.curves) {
        REQUIRE(c.alpha1 == sc.alpha1_grid);
        CHECK(c.replications == 80);
        for (double p : c.prob) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
    const auto& fe = res.curves[0];
    const auto& re = res.curves[1];
    // FE test is approximately level rho under the null effect
    CHECK(fe.prob[0] == Catch::Approx(0.05).margin(0.09));
    // strong signal: the FE test almost always fires
    CHECK(fe.prob[1] > 0.9);
    // RE shrinks the score toward zero, so its flags are a subset of FE's
    for (std::size_t k = 0; k < fe.prob.size(); ++k) CHECK(re.prob[k] <= fe.prob[k]);
    // EN accounts for total variation: at the null it stays near level too
    CHECK(res.curves[3].prob[0] == Catch::Approx(0.05).margin(0.09));

    const auto again = run_replications(sc, methods, 0.05);
    for (std::size_t m = 0; m < methods.size(); ++m)
        CHECK(res.curves[m].prob == again.curves[m].prob);  // bit-identical

    CHECK_THROWS(run_replications(sc, {"BOGUS"}, 0.05));
    CHECK_THROWS(run_replications(sc, {}, 0.05));
}

TEST_CASE("outlier replication engine produces curves for the smoothed null") {
    Scenario sc;
    sc.kind = ScenarioKind::linear_outliers;
    sc.replications = 25;
    sc.base_seed = 17;
    sc.n_providers = 200;
    sc.alpha1_grid = {0.0};
    sc.en_groups = 4;
    const auto res = run_replications(sc, {"EN", "FERE"}, 0.05);
    CHECK(res.failed_replications == 0);
    REQUIRE(res.curves.size() == 2);
    // null effect with a robust null: stays well below the FE overdispersion
    CHECK(res.curves[0].prob[0] < 0.25);
    CHECK(res.curves[1].prob[0] < 0.25);
}

TEST_CASE("survival replication engine: strata rates across lambda") {
    Scenario sc;
    sc.kind = ScenarioKind::survival_smr;
    sc.replications = 8;
    sc.base_seed = 20260823;
    sc.n_providers = 80;
    sc.surv_groups = 3;
    sc.report_strata = 3;
    sc.lambdas = {0.0, 1.0};
    const auto res = run_replications(sc, {"EN_lambda"}, 0.05);
    CHECK(res.failed_replications == 0);
    REQUIRE(res.rates.size() == 2 * 3);  // lambdas x strata
    double sum0 = 0.0, sum1 = 0.0;
    for (const auto& r : res.rates) {
        CHECK(r.rate >= 0.0);
        CHECK(r.rate <= 1.0);
        CHECK(r.se >= 0.0);
        CHECK((r.stratum >= 0 && r.stratum < 3));
        if (r.lambda == 0.0) sum0 += r.rate;
        if (r.lambda == 1.0) sum1 += r.rate;
    }
    // full relaxation flags far fewer providers than the plain FE rule
    CHECK(sum1 < sum0);

    const auto again = run_replications(sc, {"EN_lambda"}, 0.05);
    for (std::size_t k = 0; k < res.rates.size(); ++k)
        CHECK(res.rates[k].rate == again.rates[k].rate);
}

TEST_CASE("default alpha grid spans 0 to 3.5 in steps of 0.25") {
    Scenario sc;
    const auto g = sc.alpha_grid_or_default();
    REQUIRE(g.size() == 15);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 3.5);
    for (std::size_t k = 1; k < g.size(); ++k)
        CHECK(g[k] - g[k - 1] == Catch::Approx(0.25));
}
