#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "empnull/rng.hpp"
#include "empnull/smoothed_null.hpp"

using namespace empnull;

namespace {

std::vector<ProviderScore> synthetic_scores(std::uint64_t seed, std::size_t n,
                                            double size_lo, double size_hi,
                                            double mean_slope, double var_slope) {
    Rng rng(seed);
    std::vector<ProviderScore> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double m = size_lo + (size_hi - size_lo) * rng.uniform();
        scores[i].provider_id = "P" + std::to_string(i + 1);
        scores[i].size = m;
        scores[i].z_fe = rng.normal(mean_slope * m, std::sqrt(1.0 + var_slope * m));
    }
    return scores;
}

std::vector<SizeGroup> exact_groups(const std::vector<double>& sizes,
                                    const std::vector<double>& vars,
                                    const std::vector<double>& means, int count) {
    std::vector<SizeGroup> g(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        g[i].index = static_cast<int>(i);
        g[i].median_size = sizes[i];
        g[i].var_z = vars[i];
        g[i].mean_z = means.empty() ? 0.0 : means[i];
        g[i].count = count;
    }
    return g;
}

}  // namespace

TEST_CASE("group_by_size splits sorted providers into near-equal blocks") {
    std::vector<ProviderScore> scores(40);
    for (std::size_t i = 0; i < 40; ++i) {
        scores[i].provider_id = "P" + std::to_string(i + 1);
        scores[i].size = static_cast<double>(40 - i);  // reversed on purpose
    }
    const auto groups = group_by_size(scores, 2);
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].count == 20);
    CHECK(groups[1].count == 20);
    CHECK(groups[0].median_size == Catch::Approx(10.5));  // sizes 1..20
    CHECK(groups[1].median_size == Catch::Approx(30.5));  // sizes 21..40
    for (std::size_t idx : groups[0].members) CHECK(scores[idx].size <= 20.0);
    for (std::size_t idx : groups[1].members) CHECK(scores[idx].size >= 21.0);
}

TEST_CASE("group_by_size remainder goes to the leading groups, ties by id") {
    std::vector<ProviderScore> scores(65);
    for (std::size_t i = 0; i < 65; ++i) {
        scores[i].provider_id = (i < 10 ? "A" : "B") + std::to_string(i);
        scores[i].size = 50.0;  // all tied: ordering falls back to provider_id
    }
    const auto groups = group_by_size(scores, 3);
    CHECK(groups[0].count == 22);
    CHECK(groups[1].count == 22);
    CHECK(groups[2].count == 21);
    // deterministic: rerun gives identical membership
    const auto again = group_by_size(scores, 3);
    for (int g = 0; g < 3; ++g)
        CHECK(groups[static_cast<std::size_t>(g)].members ==
              again[static_cast<std::size_t>(g)].members);
}

TEST_CASE("group_by_size rejects undersized configurations") {
    std::vector<ProviderScore> scores(30);
    for (std::size_t i = 0; i < 30; ++i) scores[i].size = static_cast<double>(i + 1);
    CHECK_THROWS(group_by_size(scores, 1));
    CHECK_THROWS_WITH(group_by_size(scores, 2),
                      Catch::Matchers::ContainsSubstring("too many groups"));
}

TEST_CASE("default group count targets ~100 per group within [50,300]") {
    CHECK(default_group_count(200) == 2);
    CHECK(default_group_count(1000) == 10);
    CHECK(default_group_count(120) == 2);    // never below 2
    CHECK(default_group_count(10000) >= 34); // at most 300 per group
    for (std::size_t n : {150u, 500u, 2000u, 9999u}) {
        const int g = default_group_count(n);
        CHECK(static_cast<double>(n) / g <= 300.0);
        CHECK((g == 2 || static_cast<double>(n) / g >= 50.0));
    }
}

TEST_CASE("variance line recovers an exact linear relationship") {
    const auto groups = exact_groups({20.0, 60.0, 100.0, 140.0, 180.0},
                                     {1.2, 1.6, 2.0, 2.4, 2.8}, {}, 100);
    const auto line = fit_variance_line(groups);
    CHECK(line.gamma0 == Catch::Approx(1.0).margin(1e-6));
    CHECK(line.gamma1 == Catch::Approx(0.01).margin(1e-8));
    CHECK(line.iterations >= 1);
}

TEST_CASE("variance line on flat variances has zero slope") {
    const auto groups = exact_groups({10.0, 50.0, 90.0, 130.0}, {1.5, 1.5, 1.5, 1.5},
                                     {}, 80);
    const auto line = fit_variance_line(groups);
    CHECK(line.gamma0 == Catch::Approx(1.5).margin(1e-8));
    CHECK(line.gamma1 == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("variance line floor kicks in below 1") {
    VarianceLine line;
    line.gamma0 = 0.5;
    line.gamma1 = 0.01;
    CHECK(line.raw(20.0) == Catch::Approx(0.7));
    CHECK(line.floored(20.0) == 1.0);
    CHECK(line.floored(100.0) == Catch::Approx(1.5));
}

TEST_CASE("variance line error cases") {
    CHECK_THROWS(fit_variance_line(exact_groups({1.0, 2.0}, {1.0, 1.0}, {}, 50)));
    CHECK_THROWS_WITH(
        fit_variance_line(exact_groups({5.0, 5.0, 5.0}, {1.0, 1.1, 1.2}, {}, 50)),
        Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("mean curve falls back to a line with few groups") {
    const auto groups = exact_groups({10.0, 50.0, 90.0}, {1.0, 1.0, 1.0},
                                     {0.1, 0.5, 0.9}, 60);
    VarianceLine line;  // identity: variance 1 everywhere
    bool fallback = false;
    const auto curve = fit_mean_curve(groups, line, &fallback);
    CHECK(fallback);
    CHECK_FALSE(curve.is_spline);
    CHECK(curve(10.0) == Catch::Approx(0.1).margin(1e-9));
    CHECK(curve(90.0) == Catch::Approx(0.9).margin(1e-9));
    // plateau outside the group range
    CHECK(curve(500.0) == Catch::Approx(0.9).margin(1e-9));
    CHECK(curve(1.0) == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("mean curve merges tied group medians") {
    // the two groups at size 10 average to 0.2, collinear with the others
    const auto groups = exact_groups({10.0, 10.0, 50.0, 90.0}, {1.0, 1.0, 1.0, 1.0},
                                     {0.0, 0.4, 0.6, 1.0}, 60);
    VarianceLine line;
    const auto curve = fit_mean_curve(groups, line, nullptr);
    CHECK_FALSE(curve.is_spline);  // merged down to 3 knots
    CHECK(curve(10.0) == Catch::Approx(0.2).margin(1e-9));
    CHECK(curve(50.0) == Catch::Approx(0.6).margin(1e-9));
}

TEST_CASE("smoothed null recovers slope structure from synthetic scores") {
    const auto scores = synthetic_scores(606, 3000, 10.0, 200.0, 0.004, 0.01);
    const auto model = fit_smoothed_null(scores, 10);
    REQUIRE(model.groups.size() == 10);
    // variance line: true gamma0 = 1, gamma1 = 0.01 (robust fit is biased a
    // little low in variance, so allow a generous band)
    CHECK(model.line.gamma1 == Catch::Approx(0.01).margin(0.004));
    CHECK(model.line.raw(100.0) == Catch::Approx(2.0).margin(0.35));
    // mean curve: true mean 0.004 * size
    for (double m : {25.0, 100.0, 175.0})
        CHECK(model.mean(m) == Catch::Approx(0.004 * m).margin(0.15));
    const auto nulls = provider_nulls(model, scores);
    REQUIRE(nulls.size() == scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(nulls[i].sd >= 1.0);  // floor
        CHECK(nulls[i].mean ==
              Catch::Approx(model.mean(scores[i].size)).margin(1e-12));
    }
}

TEST_CASE("provider nulls plateau in mean but extend the variance line") {
    const auto scores = synthetic_scores(7, 3000, 50.0, 150.0, 0.0, 0.02);
    const auto model = fit_smoothed_null(scores, 8);
    std::vector<ProviderScore> outside(2);
    outside[0].size = 1.0;    // far below the fitted range
    outside[1].size = 400.0;  // far above
    const auto nulls = provider_nulls(model, outside);
    CHECK(nulls[0].mean == Catch::Approx(model.mean(model.m_min)).margin(1e-12));
    CHECK(nulls[1].mean == Catch::Approx(model.mean(model.m_max)).margin(1e-12));
    // the variance line is evaluated at the actual size (then floored)
    CHECK(nulls[1].sd ==
          Catch::Approx(std::sqrt(model.line.floored(400.0))).margin(1e-12));
    CHECK(nulls[0].sd >= 1.0);
}

TEST_CASE("one stratum equals a single pooled fit") {
    const auto scores = synthetic_scores(13, 400, 10.0, 100.0, 0.0, 0.0);
    std::vector<double> z(scores.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = scores[i].z_fe;
    const auto pooled = mle_fit(z);
    const auto nulls = stratified_nulls(scores, 1);
    for (const auto& n : nulls) {
        CHECK(n.mean == pooled.params.mean);
        CHECK(n.sd == pooled.params.sd);
        CHECK(n.null_prop == pooled.params.null_prop);
    }
}

TEST_CASE("stratified nulls are piecewise constant over the strata") {
    const auto scores = synthetic_scores(21, 600, 10.0, 200.0, 0.002, 0.01);
    std::vector<SizeGroup> groups;
    const auto nulls = stratified_nulls(scores, 3, {}, &groups);
    REQUIRE(groups.size() == 3);
    for (const auto& g : groups) {
        for (std::size_t idx : g.members) {
            CHECK(nulls[idx].mean == g.mean_z);
            CHECK(nulls[idx].sd == Catch::Approx(std::sqrt(g.var_z)));
        }
    }
    CHECK_THROWS(stratified_nulls(scores, 0));
}

TEST_CASE("flag uses strict inequalities at the threshold") {
    const double z_rho = norm_upper_quantile(0.05);
    std::vector<ProviderScore> scores(3);
    scores[0].z_fe = z_rho;          // exactly on the boundary: not flagged
    scores[1].z_fe = z_rho + 1e-9;   // just above: flagged
    scores[2].z_fe = -z_rho - 1e-9;  // just below the lower bound
    for (auto& s : scores) s.size = 10.0;
    const std::vector<NullParams> nulls(3);  // N(0,1)
    const auto one_sided = flag(scores, nulls, 0.05);
    CHECK(one_sided[0].decision == Decision::none);
    CHECK(one_sided[1].decision == Decision::worse);
    CHECK(one_sided[2].decision == Decision::none);  // one-sided never "better"
    const auto two_sided = flag(scores, nulls, 0.05, true);
    CHECK(two_sided[2].decision == Decision::better);
    CHECK(one_sided[1].threshold_upper == Catch::Approx(z_rho));
}

TEST_CASE("flag validates inputs") {
    std::vector<ProviderScore> scores(2);
    std::vector<NullParams> nulls(2);
    CHECK_THROWS(flag(scores, nulls, 0.0));
    CHECK_THROWS(flag(scores, nulls, 0.5));
    nulls.resize(1);
    CHECK_THROWS(flag(scores, nulls, 0.05));
}

TEST_CASE("flag thresholds scale with the null parameters") {
    std::vector<ProviderScore> scores(1);
    scores[0].z_fe = 4.0;
    std::vector<NullParams> nulls(1);
    nulls[0].mean = 1.0;
    nulls[0].sd = 2.0;
    const auto r = flag(scores, nulls, 0.05);
    const double z_rho = norm_upper_quantile(0.05);
    CHECK(r[0].threshold_upper == Catch::Approx(1.0 + 2.0 * z_rho));
    CHECK(r[0].threshold_lower == Catch::Approx(1.0 - 2.0 * z_rho));
    CHECK(r[0].decision == (4.0 > 1.0 + 2.0 * z_rho ? Decision::worse : Decision::none));
}
