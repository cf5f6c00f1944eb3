// Command-line front end: ingestion, scoring, null fitting, lambda policy,
// flagging, and the simulation presets, wired into reproducible batch runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "empnull/empnull.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonOpts {
    std::string input;
    std::string out_dir;
    double rho = 0.05;
    bool two_sided = false;
    int groups = 0;       // smoothed EN groups; 0 = auto
    int strata = 0;       // >0 switches to the stratified EN
    double zeta0 = 1.64;
    std::optional<double> lambda;
    std::string lambda_prior;  // "beta:a,b"
    double min_expected = 3.0;
    std::uint64_t seed = 1;
    int jobs = 1;
};

empnull::LambdaConfig lambda_config(const CommonOpts& o) {
    empnull::LambdaConfig cfg;
    cfg.seed = o.seed;
    if (!o.lambda_prior.empty()) {
        if (o.lambda)
            throw empnull::Error("--lambda and --lambda-prior are mutually exclusive");
        if (o.lambda_prior.rfind("beta:", 0) != 0)
            throw empnull::Error("unsupported prior '" + o.lambda_prior +
                                 "' (expected beta:a,b)");
        double a = 0.0, b = 0.0;
        char comma = 0;
        std::istringstream in(o.lambda_prior.substr(5));
        if (!(in >> a >> comma >> b) || comma != ',' || !(a > 0.0) || !(b > 0.0))
            throw empnull::Error("bad beta prior spec '" + o.lambda_prior + "'");
        cfg.prior = empnull::BetaPrior{a, b};
    } else {
        const double lam = o.lambda.value_or(1.0);
        if (lam < 0.0 || lam > 1.0) throw empnull::Error("lambda must lie in [0,1]");
        cfg.prior = empnull::PointPrior{lam};
    }
    return cfg;
}

json manifest_base(const std::string& command, const CommonOpts& o) {
    json m;
    m["tool"] = "empnull";
    m["version"] = kVersion;
    m["command"] = command;
    m["input"] = o.input;
    m["rho"] = o.rho;
    m["two_sided"] = o.two_sided;
    m["groups"] = o.groups;
    m["strata"] = o.strata;
    m["zeta0"] = o.zeta0;
    if (o.lambda) m["lambda"] = *o.lambda;
    if (!o.lambda_prior.empty()) m["lambda_prior"] = o.lambda_prior;
    m["min_expected"] = o.min_expected;
    m["seed"] = o.seed;
    m["jobs"] = o.jobs;
    return m;
}

void write_file(const fs::path& dir, const std::string& name, const std::string& content,
                json& manifest) {
    fs::create_directories(dir);
    empnull::atomic_write(dir / name, content);
    manifest["outputs"].push_back(name);
}

// Fit the requested empirical null, flag with the lambda policy, and emit
// the shared report files. Returns the flag reports.
std::vector<empnull::FlagReport> run_null_and_flag(
    const std::vector<empnull::ProviderScore>& scores, const CommonOpts& o,
    json& manifest) {
    empnull::MleFitConfig mle_cfg;
    mle_cfg.zeta0 = o.zeta0;

    std::vector<empnull::NullParams> nulls;
    if (o.strata > 0) {
        nulls = empnull::stratified_nulls(scores, o.strata, mle_cfg);
        manifest["null_kind"] = "stratified";
    } else {
        const empnull::SmoothedNullModel model =
            empnull::fit_smoothed_null(scores, o.groups, mle_cfg);
        nulls = empnull::provider_nulls(model, scores);
        manifest["null_kind"] = "smoothed";
        write_file(o.out_dir, "null_model.json", empnull::null_model_json(model).dump(2) + "\n",
                   manifest);
    }

    const auto flags =
        empnull::flag_with_lambda(scores, nulls, lambda_config(o), o.rho, o.two_sided);
    write_file(o.out_dir, "nulls.csv", empnull::write_nulls_report(scores, flags), manifest);
    write_file(o.out_dir, "funnel.csv", empnull::write_funnel_report(scores, flags), manifest);
    return flags;
}

int cmd_profile_linear(const CommonOpts& o) {
    std::ifstream in(o.input);
    if (!in) throw empnull::Error("cannot open " + o.input);
    const auto records = empnull::read_linear_csv(in);
    const auto ds = empnull::make_linear_dataset(records);
    empnull::validate_dataset(ds);

    json manifest = manifest_base("profile-linear", o);
    manifest["outputs"] = json::array();

    const auto fe = empnull::fit_fixed_effects_beta(ds);
    const auto adjusted = empnull::adjust_outcomes(ds, fe.beta);
    const auto comps = empnull::estimate_variance_components(adjusted);
    const auto score_set = empnull::compute_z_scores(adjusted, comps);
    write_file(o.out_dir, "scores.csv", empnull::write_scores_report(score_set), manifest);

    manifest["beta"] = fe.beta;
    manifest["sigma_w"] = comps.sigma_w;
    manifest["sigma_alpha"] = comps.sigma_alpha;
    manifest["mu"] = comps.mu;

    run_null_and_flag(empnull::to_provider_scores(score_set), o, manifest);
    write_file(o.out_dir, "manifest.json", manifest.dump(2) + "\n", manifest);
    return 0;
}

int cmd_profile_smr(const CommonOpts& o) {
    std::ifstream in(o.input);
    if (!in) throw empnull::Error("cannot open " + o.input);
    const auto records = empnull::read_survival_csv(in);
    const auto ds = empnull::make_survival_dataset(records);
    empnull::validate_dataset(ds);

    json manifest = manifest_base("profile-smr", o);
    manifest["outputs"] = json::array();

    const auto res = empnull::smr_pipeline(ds, o.min_expected);
    manifest["beta"] = res.cox.beta;
    manifest["excluded_below_min_expected"] = res.n_excluded;
    write_file(o.out_dir, "smr.csv", empnull::write_smr_report(res.smr), manifest);

    run_null_and_flag(res.scores, o, manifest);
    write_file(o.out_dir, "manifest.json", manifest.dump(2) + "\n", manifest);
    return 0;
}

int cmd_profile_z(const CommonOpts& o) {
    std::ifstream in(o.input);
    if (!in) throw empnull::Error("cannot open " + o.input);
    const auto scores = empnull::read_scores_csv(in);

    json manifest = manifest_base("profile-z", o);
    manifest["outputs"] = json::array();
    run_null_and_flag(scores, o, manifest);
    write_file(o.out_dir, "manifest.json", manifest.dump(2) + "\n", manifest);
    return 0;
}

struct SimulateOpts {
    std::string preset;
    std::string scenario_file;
    std::string out_dir;
    double rho = 0.05;
    std::uint64_t seed = 1;
    int jobs = 1;
    int reps = 0;  // 0 = preset default
    int n = 100;   // equal-n panel
    int n1 = 125;  // outlier-panel provider 1 size
};

void apply_scenario_json(empnull::Scenario& sc, const json& j) {
    if (j.contains("kind")) {
        const std::string k = j["kind"];
        if (k == "linear_equal_n") sc.kind = empnull::ScenarioKind::linear_equal_n;
        else if (k == "linear_outliers") sc.kind = empnull::ScenarioKind::linear_outliers;
        else if (k == "survival_smr") sc.kind = empnull::ScenarioKind::survival_smr;
        else throw empnull::Error("unknown scenario kind '" + k + "'");
    }
    auto get = [&j](const char* key, auto& target) {
        if (j.contains(key)) target = j[key].get<std::decay_t<decltype(target)>>();
    };
    get("replications", sc.replications);
    get("base_seed", sc.base_seed);
    get("n_providers", sc.n_providers);
    get("mu", sc.mu);
    get("sigma_alpha", sc.sigma_alpha);
    get("sigma_w", sc.sigma_w);
    get("equal_n", sc.equal_n);
    get("provider1_n", sc.provider1_n);
    get("size_lo", sc.size_lo);
    get("size_hi", sc.size_hi);
    get("outlier_frac", sc.outlier_frac);
    get("outlier_mag", sc.outlier_mag);
    get("alpha1_grid", sc.alpha1_grid);
    get("en_groups", sc.en_groups);
    get("base_hazard", sc.base_hazard);
    get("beta", sc.beta_surv);
    get("alpha_sd", sc.alpha_sd_surv);
    get("censor_lo", sc.censor_lo);
    get("censor_hi", sc.censor_hi);
    get("surv_size_lo", sc.surv_size_lo);
    get("surv_size_hi", sc.surv_size_hi);
    get("lambdas", sc.lambdas);
    get("surv_groups", sc.surv_groups);
    get("report_strata", sc.report_strata);
    get("min_expected", sc.min_expected);
}

json scenario_file_to_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw empnull::Error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') return json::parse(text);
    // key=value lines
    json j;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw empnull::Error("bad scenario line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            j[key] = json::parse(val);  // numbers, arrays, booleans
        } catch (const json::parse_error&) {
            j[key] = val;  // bare string
        }
    }
    return j;
}

int cmd_simulate(const SimulateOpts& o) {
    empnull::Scenario sc;
    std::vector<std::string> methods;
    if (o.preset == "fig3") {
        sc.kind = empnull::ScenarioKind::linear_equal_n;
        sc.n_providers = 200;
        sc.equal_n = o.n;
        sc.replications = 1000;
        methods = {"FE", "RE", "FERE", "EN"};
    } else if (o.preset == "fig4") {
        sc.kind = empnull::ScenarioKind::linear_outliers;
        sc.n_providers = 3000;
        sc.provider1_n = o.n1;
        sc.replications = 1000;
        methods = {"FE", "FERE", "EN", "EN_oracle"};
    } else if (o.preset == "fig5" || o.preset == "fig5c") {
        sc.kind = empnull::ScenarioKind::survival_smr;
        sc.n_providers = 2000;
        sc.replications = 500;
        methods = {"EN_lambda"};
    } else if (o.preset.empty()) {
        if (o.scenario_file.empty())
            throw empnull::Error("simulate: need --preset or --scenario");
        methods = {"FE", "RE", "FERE", "EN"};
    } else {
        throw empnull::Error("unknown preset '" + o.preset + "'");
    }
    if (!o.scenario_file.empty()) apply_scenario_json(sc, scenario_file_to_json(o.scenario_file));
    sc.base_seed = o.seed;
    if (o.reps > 0) sc.replications = o.reps;
    if (sc.kind == empnull::ScenarioKind::survival_smr) methods = {"EN_lambda"};

    const auto result = empnull::run_replications(sc, methods, o.rho, o.jobs);

    json manifest;
    manifest["tool"] = "empnull";
    manifest["version"] = kVersion;
    manifest["command"] = "simulate";
    manifest["preset"] = o.preset;
    manifest["kind"] = empnull::scenario_kind_name(sc.kind);
    manifest["seed"] = sc.base_seed;
    manifest["replications"] = sc.replications;
    manifest["rho"] = o.rho;
    manifest["jobs"] = o.jobs;
    manifest["failed_replications"] = result.failed_replications;
    manifest["methods"] = methods;
    manifest["outputs"] = json::array();

    const fs::path dir = o.out_dir;
    if (!result.curves.empty()) {
        std::ostringstream out;
        out << "method,alpha1,prob,se\n";
        for (const auto& c : result.curves)
            for (std::size_t k = 0; k < c.alpha1.size(); ++k)
                out << c.method << ',' << c.alpha1[k] << ',' << c.prob[k] << ','
                    << c.se[k] << "\n";
        write_file(dir, "curves.csv", out.str(), manifest);
    }
    if (!result.rates.empty()) {
        std::ostringstream out;
        out << "method,lambda,stratum,rate,se\n";
        for (const auto& r : result.rates)
            out << r.method << ',' << r.lambda << ',' << r.stratum << ',' << r.rate
                << ',' << r.se << "\n";
        write_file(dir, "strata_rates.csv", out.str(), manifest);
    }
    write_file(dir, "manifest.json", manifest.dump(2) + "\n", manifest);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Empirical-null provider profiling toolkit"};
    app.require_subcommand(1);

    CommonOpts common;
    SimulateOpts sim;

    auto add_common = [&common](CLI::App* sub, bool needs_input) {
        if (needs_input)
            sub->add_option("--input", common.input, "input CSV")->required();
        sub->add_option("--out", common.out_dir, "output directory")->required();
        sub->add_option("--rho", common.rho, "nominal one-sided level");
        sub->add_flag("--two-sided", common.two_sided, "also flag better-than-expected");
        sub->add_option("--groups", common.groups, "smoothed-null group count (0=auto)");
        sub->add_option("--strata", common.strata, "use the stratified null with K strata");
        sub->add_option("--zeta0", common.zeta0, "truncation half-width multiplier");
        sub->add_option("--lambda", [&common](const std::vector<std::string>& v) {
            common.lambda = std::stod(v[0]);
            return true;
        }, "accountability fraction in [0,1]");
        sub->add_option("--lambda-prior", common.lambda_prior, "prior, e.g. beta:2,2");
        sub->add_option("--min-expected", common.min_expected, "SMR inclusion threshold");
        sub->add_option("--seed", common.seed, "base seed");
        sub->add_option("--jobs", common.jobs, "worker threads");
    };

    auto* linear = app.add_subcommand("profile-linear", "linear-model profiling");
    add_common(linear, true);
    auto* smr = app.add_subcommand("profile-smr", "survival SMR profiling");
    add_common(smr, true);
    auto* prz = app.add_subcommand("profile-z", "profile precomputed Z-scores");
    add_common(prz, true);

    auto* simulate = app.add_subcommand("simulate", "replicated simulation studies");
    simulate->add_option("--preset", sim.preset, "fig3 | fig4 | fig5");
    simulate->add_option("--scenario", sim.scenario_file, "scenario config (JSON or key=value)");
    simulate->add_option("--out", sim.out_dir, "output directory")->required();
    simulate->add_option("--rho", sim.rho, "nominal one-sided level");
    simulate->add_option("--seed", sim.seed, "base seed");
    simulate->add_option("--jobs", sim.jobs, "worker threads");
    simulate->add_option("--reps", sim.reps, "replication count override");
    simulate->add_option("--n", sim.n, "equal-n panel size (fig3)");
    simulate->add_option("--n1", sim.n1, "provider-1 size (fig4)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (linear->parsed()) return cmd_profile_linear(common);
        if (smr->parsed()) return cmd_profile_smr(common);
        if (prz->parsed()) return cmd_profile_z(common);
        if (simulate->parsed()) return cmd_simulate(sim);
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
