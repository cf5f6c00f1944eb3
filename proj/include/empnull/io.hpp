#pragma once

// CSV ingestion and report emission, plus JSON serialization of the fitted
// null model. All file writes go through a temp-file + rename.

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "empnull/linear.hpp"
#include "empnull/smoothed_null.hpp"
#include "empnull/survival.hpp"
#include "empnull/types.hpp"

namespace empnull {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

inline double parse_double(const std::string& s, const std::string& what, std::size_t row) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE)
        throw Error("row " + std::to_string(row) + ": bad " + what + " value '" + s + "'");
    return v;
}

// Shortest decimal that round-trips to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    for (int prec = 6; prec <= 17; ++prec) {
        char tmp[32];
        std::snprintf(tmp, sizeof(tmp), "%.*g", prec, v);
        std::sscanf(tmp, "%lf", &back);
        if (back == v) return tmp;
    }
    return buf;
}

}  // namespace detail

// Write content to path atomically (temp file in the same directory, then
// rename).
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// --- ingestion ---------------------------------------------------------

// Schema: provider_id,y,x1,...,xp
inline std::vector<PatientRecord> read_linear_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("empty dataset");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "provider_id" || header[1] != "y")
        throw Error("bad header: expected provider_id,y,x1,...");
    const std::size_t p = header.size() - 2;

    std::vector<PatientRecord> records;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw Error("row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(f.size()));
        PatientRecord r;
        r.provider_id = f[0];
        r.outcome = detail::parse_double(f[1], "y", row);
        for (std::size_t k = 0; k < p; ++k)
            r.covariates.push_back(detail::parse_double(f[2 + k], "x" + std::to_string(k + 1), row));
        records.push_back(std::move(r));
    }
    return records;
}

// Schema: provider_id,time,status,x1,...,xp with status in {0,1}
inline std::vector<SurvivalRecord> read_survival_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("empty dataset");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "provider_id" || header[1] != "time" ||
        header[2] != "status")
        throw Error("bad header: expected provider_id,time,status,x1,...");
    const std::size_t p = header.size() - 3;

    std::vector<SurvivalRecord> records;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw Error("row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(f.size()));
        SurvivalRecord r;
        r.provider_id = f[0];
        r.time = detail::parse_double(f[1], "time", row);
        if (f[2] == "1")
            r.status = EventStatus::event;
        else if (f[2] == "0")
            r.status = EventStatus::censored;
        else
            throw Error("row " + std::to_string(row) + ": unknown status code '" + f[2] + "'");
        for (std::size_t k = 0; k < p; ++k)
            r.covariates.push_back(detail::parse_double(f[3 + k], "x" + std::to_string(k + 1), row));
        records.push_back(std::move(r));
    }
    return records;
}

// Schema: provider_id,size,z (precomputed FE Z-scores); duplicates rejected.
inline std::vector<ProviderScore> read_scores_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("empty dataset");
    const auto header = detail::split_csv_line(line);
    if (header.size() != 3 || header[0] != "provider_id" || header[1] != "size" ||
        header[2] != "z")
        throw Error("bad header: expected provider_id,size,z");

    std::vector<ProviderScore> scores;
    ProviderIndex seen;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 3)
            throw Error("row " + std::to_string(row) + ": expected 3 fields");
        if (seen.lookup.count(f[0]))
            throw Error("row " + std::to_string(row) + ": duplicate provider_id '" +
                        f[0] + "'");
        seen.add(f[0]);
        ProviderScore s;
        s.provider_id = f[0];
        s.size = detail::parse_double(f[1], "size", row);
        s.z_fe = detail::parse_double(f[2], "z", row);
        if (!(s.size > 0.0)) throw Error("row " + std::to_string(row) + ": size must be positive");
        scores.push_back(std::move(s));
    }
    if (scores.empty()) throw Error("empty dataset");
    return scores;
}

// --- dataset serialization (round-trip exact) --------------------------

inline std::string write_linear_csv(const std::vector<PatientRecord>& records) {
    std::ostringstream out;
    const std::size_t p = records.empty() ? 0 : records.front().covariates.size();
    out << "provider_id,y";
    for (std::size_t k = 0; k < p; ++k) out << ",x" << (k + 1);
    out << "\n";
    for (const auto& r : records) {
        out << r.provider_id << ',' << detail::fmt_double(r.outcome);
        for (double x : r.covariates) out << ',' << detail::fmt_double(x);
        out << "\n";
    }
    return out.str();
}

inline std::string write_survival_csv(const std::vector<SurvivalRecord>& records) {
    std::ostringstream out;
    const std::size_t p = records.empty() ? 0 : records.front().covariates.size();
    out << "provider_id,time,status";
    for (std::size_t k = 0; k < p; ++k) out << ",x" << (k + 1);
    out << "\n";
    for (const auto& r : records) {
        out << r.provider_id << ',' << detail::fmt_double(r.time) << ','
            << (r.status == EventStatus::event ? 1 : 0);
        for (double x : r.covariates) out << ',' << detail::fmt_double(x);
        out << "\n";
    }
    return out.str();
}

// --- reports ------------------------------------------------------------

inline std::string write_scores_report(const LinearScoreSet& scores) {
    std::ostringstream out;
    out << "provider_id,n,ybar,z_fe,z_re,z_fere,R\n";
    for (const auto& s : scores)
        out << s.provider_id << ',' << s.n << ',' << detail::fmt_double(s.ybar) << ','
            << detail::fmt_double(s.z_fe) << ',' << detail::fmt_double(s.z_re) << ','
            << detail::fmt_double(s.z_fere) << ',' << detail::fmt_double(s.shrinkage)
            << "\n";
    return out.str();
}

inline std::string write_nulls_report(const std::vector<ProviderScore>& scores,
                                      const std::vector<FlagReport>& flags) {
    std::ostringstream out;
    out << "provider_id,size,z_fe,null_mean,null_sd,flag\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << scores[i].provider_id << ',' << detail::fmt_double(scores[i].size) << ','
            << detail::fmt_double(scores[i].z_fe) << ','
            << detail::fmt_double(flags[i].null_mean) << ','
            << detail::fmt_double(flags[i].null_sd_effective) << ','
            << decision_name(flags[i].decision) << "\n";
    return out.str();
}

inline std::string write_funnel_report(const std::vector<ProviderScore>& scores,
                                       const std::vector<FlagReport>& flags) {
    std::ostringstream out;
    out << "size,z,threshold_upper,threshold_lower\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << detail::fmt_double(scores[i].size) << ','
            << detail::fmt_double(scores[i].z_fe) << ','
            << detail::fmt_double(flags[i].threshold_upper) << ','
            << detail::fmt_double(flags[i].threshold_lower) << "\n";
    return out.str();
}

inline std::string write_smr_report(const std::vector<SmrScore>& smr) {
    std::ostringstream out;
    out << "provider_id,patient_years,observed,expected,smr,mid_p,z_fe\n";
    for (const auto& s : smr)
        out << s.provider_id << ',' << detail::fmt_double(s.patient_years) << ','
            << s.observed << ',' << detail::fmt_double(s.expected) << ','
            << detail::fmt_double(s.smr) << ',' << detail::fmt_double(s.mid_p) << ','
            << detail::fmt_double(s.z_fe) << "\n";
    return out.str();
}

inline nlohmann::json null_model_json(const SmoothedNullModel& model) {
    nlohmann::json j;
    j["variance_line"] = {{"gamma0", model.line.gamma0},
                          {"gamma1", model.line.gamma1},
                          {"iterations", model.line.iterations}};
    j["size_range"] = {model.m_min, model.m_max};
    j["mean_curve"]["linear_fallback"] = model.linear_mean_fallback;
    if (model.mean.is_spline) {
        j["mean_curve"]["knots"] = model.mean.spline.knots();
        j["mean_curve"]["values"] = model.mean.spline.values();
        j["mean_curve"]["second_derivs"] = model.mean.spline.second_derivs();
        j["mean_curve"]["lambda"] = model.mean.spline.lambda();
    } else {
        j["mean_curve"]["intercept"] = model.mean.lin_a;
        j["mean_curve"]["slope"] = model.mean.lin_b;
    }
    j["groups"] = nlohmann::json::array();
    for (const auto& g : model.groups)
        j["groups"].push_back({{"index", g.index},
                               {"median_size", g.median_size},
                               {"mean_z", g.mean_z},
                               {"var_z", g.var_z},
                               {"null_prop", g.null_prop},
                               {"count", g.count}});
    return j;
}

}  // namespace empnull
