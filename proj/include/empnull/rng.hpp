#pragma once

// Seeded random number generation. All randomness flows from a single base
// seed; per-task streams are derived with a counter-based mix so work units
// can run in any order with identical results.

#include <cstdint>
#include <random>

namespace empnull {

// splitmix64 finalizer; good avalanche for seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from (base, indices...).
inline std::uint64_t derive_seed(std::uint64_t base) { return mix64(base); }

template <typename... Rest>
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t head, Rest... rest) {
    return derive_seed(mix64(base ^ mix64(head)), rest...);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return uni_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uni_(engine_); }
    double normal(double mean = 0.0, double sd = 1.0) {
        return mean + sd * normal_(engine_);
    }
    double exponential(double rate) {
        return std::exponential_distribution<double>(rate)(engine_);
    }
    // Uniform integer in [lo, hi] inclusive.
    long uniform_int(long lo, long hi) {
        return std::uniform_int_distribution<long>(lo, hi)(engine_);
    }
    double gamma(double shape, double scale) {
        return std::gamma_distribution<double>(shape, scale)(engine_);
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uni_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace empnull
