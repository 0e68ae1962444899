#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace promptforge {

// Counter-based deterministic random source. Same (seed, substream name, call
// sequence) yields the same outputs on every platform; streams derived via
// substream() are statistically independent of the parent.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), counter_(0) {}

    SeededRng substream(std::string_view name) const;
    SeededRng substream(uint64_t index) const;

    uint64_t next_u64();

    // Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer on [0, n).
    uint64_t uniform_index(uint64_t n);
    // Uniform integer on [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi);

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(shape k, scale theta) via Marsaglia-Tsang, with the u^(1/k)
    // boost for k < 1. Throws on non-positive parameters.
    double gamma(double shape_k, double scale_theta);

private:
    SeededRng(uint64_t key, uint64_t counter) : key_(key), counter_(counter) {}
    static uint64_t mix(uint64_t x);

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace promptforge
