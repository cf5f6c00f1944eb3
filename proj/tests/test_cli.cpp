#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "empnull/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string cli = EMPNULL_CLI_PATH;

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("empnull_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args, const fs::path& stderr_file = {}) {
    std::string cmd = cli + " " + args + " > /dev/null";
    cmd += stderr_file.empty() ? " 2>/dev/null" : " 2> " + stderr_file.string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

void write_scores_csv(const fs::path& p, std::size_t n_providers, std::uint64_t seed) {
    empnull::Rng rng(seed);
    std::ofstream out(p);
    out << "provider_id,size,z\n";
    for (std::size_t i = 0; i < n_providers; ++i) {
        const double size = 10.0 + 190.0 * rng.uniform();
        out << "P" << (i + 1) << ',' << size << ','
            << rng.normal(0.0, std::sqrt(1.0 + 0.01 * size)) << "\n";
    }
}

void write_linear_csv(const fs::path& p, std::size_t n_providers, std::size_t n_base,
                      std::uint64_t seed) {
    empnull::Rng rng(seed);
    std::ofstream out(p);
    out << "provider_id,y,x1\n";
    for (std::size_t i = 0; i < n_providers; ++i) {
        const double alpha = rng.normal(0.0, 1.0);
        const std::size_t n_each = n_base + i % (2 * n_base);  // sizes must vary
        for (std::size_t j = 0; j < n_each; ++j) {
            const double x = rng.normal();
            out << "P" << (i + 1) << ',' << (alpha + 0.5 * x + rng.normal(0.0, 4.0))
                << ',' << x << "\n";
        }
    }
}

}  // namespace

TEST_CASE("profile-z writes reports, a null model and a manifest") {
    const auto dir = fresh_dir("z1");
    const auto input = dir / "scores.csv";
    write_scores_csv(input, 300, 11);
    const auto out = dir / "out";
    REQUIRE(run("profile-z --input " + input.string() + " --out " + out.string() +
                " --rho 0.05") == 0);
    for (const char* f : {"nulls.csv", "funnel.csv", "null_model.json", "manifest.json"})
        CHECK(fs::exists(out / f));

    const std::string nulls = slurp(out / "nulls.csv");
    CHECK(line_count(nulls) == 301);  // header + one row per provider
    CHECK(nulls.rfind("provider_id,size,z_fe,null_mean,null_sd,flag", 0) == 0);

    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["tool"] == "empnull");
    CHECK(manifest["command"] == "profile-z");
    CHECK(manifest["null_kind"] == "smoothed");
    CHECK(manifest["rho"] == 0.05);

    const json model = json::parse(slurp(out / "null_model.json"));
    CHECK(model.contains("variance_line"));
    CHECK(model["groups"].size() >= 3);
}

TEST_CASE("profile-z is deterministic across runs") {
    const auto dir = fresh_dir("z2");
    const auto input = dir / "scores.csv";
    write_scores_csv(input, 250, 29);
    const auto out_a = dir / "a";
    const auto out_b = dir / "b";
    const std::string common = "profile-z --input " + input.string() +
                               " --lambda-prior beta:2,2 --seed 5 --out ";
    REQUIRE(run(common + out_a.string()) == 0);
    REQUIRE(run(common + out_b.string()) == 0);
    CHECK(slurp(out_a / "nulls.csv") == slurp(out_b / "nulls.csv"));
    CHECK(slurp(out_a / "funnel.csv") == slurp(out_b / "funnel.csv"));
}

TEST_CASE("profile-z with --strata uses the stratified null") {
    const auto dir = fresh_dir("z3");
    const auto input = dir / "scores.csv";
    write_scores_csv(input, 300, 31);
    const auto out = dir / "out";
    REQUIRE(run("profile-z --input " + input.string() + " --out " + out.string() +
                " --strata 3") == 0);
    CHECK_FALSE(fs::exists(out / "null_model.json"));
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["null_kind"] == "stratified");

    // null_sd is piecewise constant: at most 3 distinct values
    std::istringstream in(slurp(out / "nulls.csv"));
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> sds;
    while (std::getline(in, line)) {
        std::size_t pos = 0;
        for (int k = 0; k < 4; ++k) pos = line.find(',', pos) + 1;
        sds.push_back(line.substr(pos, line.find(',', pos) - pos));
    }
    std::sort(sds.begin(), sds.end());
    sds.erase(std::unique(sds.begin(), sds.end()), sds.end());
    CHECK(sds.size() <= 3);
}

TEST_CASE("profile-linear runs end to end") {
    const auto dir = fresh_dir("lin");
    const auto input = dir / "data.csv";
    write_linear_csv(input, 240, 20, 3);
    const auto out = dir / "out";
    REQUIRE(run("profile-linear --input " + input.string() + " --out " + out.string() +
                " --groups 3 --lambda 0.8") == 0);
    CHECK(fs::exists(out / "scores.csv"));
    CHECK(fs::exists(out / "nulls.csv"));
    const std::string scores = slurp(out / "scores.csv");
    CHECK(line_count(scores) == 241);
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["beta"].size() == 1);
    CHECK(std::fabs(manifest["beta"][0].get<double>() - 0.5) < 0.1);
    CHECK(manifest["lambda"] == 0.8);
    CHECK(std::fabs(manifest["sigma_w"].get<double>() - 4.0) < 0.2);
}

TEST_CASE("malformed input is reported as a JSON error with the row number") {
    const auto dir = fresh_dir("err");
    const auto input = dir / "surv.csv";
    {
        std::ofstream out(input);
        out << "provider_id,time,status,x1\nA,1.5,1,0.2\nA,2.0,2,0.1\n";
    }
    const auto err_file = dir / "stderr.txt";
    CHECK(run("profile-smr --input " + input.string() + " --out " +
              (dir / "out").string(), err_file) == 1);
    const json err = json::parse(slurp(err_file));
    const std::string msg = err["error"];
    CHECK(msg.find("status") != std::string::npos);
    CHECK(msg.find("row 3") != std::string::npos);
}

TEST_CASE("duplicate provider ids in a scores file are rejected") {
    const auto dir = fresh_dir("dup");
    const auto input = dir / "scores.csv";
    {
        std::ofstream out(input);
        out << "provider_id,size,z\nA,10,0.5\nB,20,0.1\nA,30,-0.2\n";
    }
    const auto err_file = dir / "stderr.txt";
    CHECK(run("profile-z --input " + input.string() + " --out " +
              (dir / "out").string(), err_file) == 1);
    const json err = json::parse(slurp(err_file));
    CHECK(err["error"].get<std::string>().find("duplicate") != std::string::npos);
}

TEST_CASE("simulate with a linear preset writes curves") {
    const auto dir = fresh_dir("sim3");
    const auto scen = dir / "scenario.txt";
    {
        std::ofstream out(scen);
        out << "alpha1_grid=[0,1]\n";  // trim the grid to keep this test fast
    }
    const auto out = dir / "out";
    REQUIRE(run("simulate --preset fig3 --reps 5 --seed 3 --scenario " + scen.string() +
                " --out " + out.string()) == 0);
    const std::string curves = slurp(out / "curves.csv");
    CHECK(curves.rfind("method,alpha1,prob,se", 0) == 0);
    CHECK(line_count(curves) == 1 + 4 * 2);  // 4 methods x 2 grid points
    const json manifest = json::parse(slurp(out / "manifest.json"));
    CHECK(manifest["replications"] == 5);
    CHECK(manifest["failed_replications"] == 0);
    CHECK(manifest["kind"] == "linear_equal_n");
}

TEST_CASE("simulate with a survival scenario writes strata rates") {
    const auto dir = fresh_dir("sim5");
    const auto scen = dir / "scenario.json";
    {
        std::ofstream out(scen);
        out << R"({"kind":"survival_smr","n_providers":80,"surv_groups":3,)"
            << R"("report_strata":3,"lambdas":[0,1],"replications":2})" << "\n";
    }
    const auto out = dir / "out";
    REQUIRE(run("simulate --scenario " + scen.string() + " --seed 8 --out " +
                out.string()) == 0);
    const std::string rates = slurp(out / "strata_rates.csv");
    CHECK(rates.rfind("method,lambda,stratum,rate,se", 0) == 0);
    CHECK(line_count(rates) == 1 + 2 * 3);  // 2 lambdas x 3 strata
    CHECK_FALSE(fs::exists(out / "curves.csv"));
}

TEST_CASE("usage errors exit nonzero") {
    CHECK(run("") != 0);                      // missing subcommand
    CHECK(run("simulate") != 0);              // missing --out
    CHECK(run("profile-z --input /nonexistent.csv --out /tmp/empnull_cli_none") != 0);
    const auto dir = fresh_dir("mx");
    const auto input = dir / "scores.csv";
    write_scores_csv(input, 300, 1);
    // --lambda and --lambda-prior are mutually exclusive
    CHECK(run("profile-z --input " + input.string() + " --out " +
              (dir / "out").string() + " --lambda 0.5 --lambda-prior beta:2,2") == 1);
}
