#pragma once

// Shared data model exchanged between ingestion, scoring, null fitting and
// reporting.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace empnull {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct PatientRecord {
    std::string provider_id;
    double outcome = 0.0;
    std::vector<double> covariates;
};

enum class EventStatus { censored = 0, event = 1 };

struct SurvivalRecord {
    std::string provider_id;
    double time = 0.0;
    EventStatus status = EventStatus::censored;
    std::vector<double> covariates;
};

struct ProviderScore {
    std::string provider_id;
    double size = 0.0;      // n_i, or patient-years for survival outcomes
    double z_fe = 0.0;
    double observed = 0.0;  // O_i (survival path only)
    double expected = 0.0;  // E_i (survival path only)
};

// A normal empirical null for a stratum or a single provider.
struct NullParams {
    double mean = 0.0;
    double sd = 1.0;
    double null_prop = 1.0;  // 1 when not estimated
};

struct LinearVarianceComponents {
    double mu = 0.0;
    double sigma_alpha = 0.0;
    double sigma_w = 1.0;
    std::vector<double> beta;
};

enum class Decision { none, worse, better };

inline const char* decision_name(Decision d) {
    switch (d) {
        case Decision::worse: return "worse";
        case Decision::better: return "better";
        default: return "none";
    }
}

struct FlagReport {
    std::string provider_id;
    double z_fe = 0.0;
    double null_mean = 0.0;
    double null_sd_effective = 1.0;  // sigma_{lambda,i}
    double threshold_upper = 0.0;
    double threshold_lower = 0.0;
    Decision decision = Decision::none;
    double rho = 0.05;
    double lambda = 1.0;
};

// Dense provider index: ids in first-appearance order, map to 0..N-1.
struct ProviderIndex {
    std::vector<std::string> ids;
    std::unordered_map<std::string, std::size_t> lookup;

    std::size_t add(const std::string& id) {
        auto it = lookup.find(id);
        if (it != lookup.end()) return it->second;
        const std::size_t idx = ids.size();
        lookup.emplace(id, idx);
        ids.push_back(id);
        return idx;
    }
    std::size_t size() const { return ids.size(); }
};

struct DatasetSummary {
    std::size_t n_providers = 0;
    std::size_t n_records = 0;
    std::size_t n_covariates = 0;
    std::vector<std::size_t> counts;  // per provider, index order
};

// Validated patient-level dataset for the linear pipeline. Immutable after
// validation; safe to share read-only across parallel workers.
struct LinearDataset {
    ProviderIndex providers;
    std::vector<std::size_t> provider_of;  // per record
    std::vector<double> y;
    std::vector<double> x;  // row-major, n_records x p
    std::size_t p = 0;

    std::size_t n_records() const { return y.size(); }
    std::size_t n_providers() const { return providers.size(); }
    double covariate(std::size_t rec, std::size_t k) const { return x[rec * p + k]; }

    std::vector<std::size_t> provider_counts() const {
        std::vector<std::size_t> c(n_providers(), 0);
        for (std::size_t i : provider_of) ++c[i];
        return c;
    }
};

struct SurvivalDataset {
    ProviderIndex providers;
    std::vector<std::size_t> provider_of;
    std::vector<double> time;
    std::vector<int> status;  // 1 = event
    std::vector<double> x;    // row-major
    std::size_t p = 0;

    std::size_t n_records() const { return time.size(); }
    std::size_t n_providers() const { return providers.size(); }
    double covariate(std::size_t rec, std::size_t k) const { return x[rec * p + k]; }
};

inline LinearDataset make_linear_dataset(const std::vector<PatientRecord>& records) {
    if (records.empty()) throw Error("empty dataset");
    LinearDataset ds;
    ds.p = records.front().covariates.size();
    ds.y.reserve(records.size());
    ds.provider_of.reserve(records.size());
    ds.x.reserve(records.size() * ds.p);
    std::size_t row = 0;
    for (const auto& r : records) {
        if (r.covariates.size() != ds.p)
            throw Error("covariate dimension mismatch at record " + std::to_string(row) +
                        ": expected " + std::to_string(ds.p) + ", got " +
                        std::to_string(r.covariates.size()));
        if (!std::isfinite(r.outcome))
            throw Error("non-finite outcome at record " + std::to_string(row));
        ds.provider_of.push_back(ds.providers.add(r.provider_id));
        ds.y.push_back(r.outcome);
        ds.x.insert(ds.x.end(), r.covariates.begin(), r.covariates.end());
        ++row;
    }
    return ds;
}

inline SurvivalDataset make_survival_dataset(const std::vector<SurvivalRecord>& records) {
    if (records.empty()) throw Error("empty dataset");
    SurvivalDataset ds;
    ds.p = records.front().covariates.size();
    std::size_t row = 0;
    for (const auto& r : records) {
        if (r.covariates.size() != ds.p)
            throw Error("covariate dimension mismatch at record " + std::to_string(row));
        if (!(r.time > 0.0) || !std::isfinite(r.time))
            throw Error("nonpositive time at record " + std::to_string(row));
        ds.provider_of.push_back(ds.providers.add(r.provider_id));
        ds.time.push_back(r.time);
        ds.status.push_back(r.status == EventStatus::event ? 1 : 0);
        ds.x.insert(ds.x.end(), r.covariates.begin(), r.covariates.end());
        ++row;
    }
    return ds;
}

template <typename Dataset>
inline DatasetSummary validate_dataset(const Dataset& ds) {
    DatasetSummary s;
    s.n_providers = ds.n_providers();
    s.n_records = ds.n_records();
    s.n_covariates = ds.p;
    std::vector<std::size_t> counts(s.n_providers, 0);
    for (std::size_t i : ds.provider_of) ++counts[i];
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] == 0)
            throw Error("provider with zero records: " + ds.providers.ids[i]);
    s.counts = std::move(counts);
    return s;
}

inline DatasetSummary validate_dataset(const std::vector<PatientRecord>& records) {
    return validate_dataset(make_linear_dataset(records));
}

inline DatasetSummary validate_dataset(const std::vector<SurvivalRecord>& records) {
    return validate_dataset(make_survival_dataset(records));
}

}  // namespace empnull
