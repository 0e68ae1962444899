#include "promptforge/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "promptforge/hash.hpp"

namespace promptforge {

uint64_t SeededRng::mix(uint64_t x) {
    // SplitMix64 finalizer.
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

SeededRng SeededRng::substream(std::string_view name) const {
    return SeededRng(mix(key_ ^ fnv1a64(name)), 0);
}

SeededRng SeededRng::substream(uint64_t index) const {
    return SeededRng(mix(key_ ^ mix(index ^ 0xd1b54a32d192ed03ull)), 0);
}

uint64_t SeededRng::next_u64() {
    return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_);
}

double SeededRng::uniform() {
    // 53-bit mantissa, uniform on [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t SeededRng::uniform_index(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
    // Rejection sampling for an unbiased draw.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

int64_t SeededRng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    return lo + static_cast<int64_t>(uniform_index(static_cast<uint64_t>(hi - lo) + 1));
}

double SeededRng::normal() {
    // Box-Muller; u1 nudged away from zero so log stays finite.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double SeededRng::gamma(double shape_k, double scale_theta) {
    if (!(shape_k > 0.0) || !(scale_theta > 0.0)) {
        throw std::invalid_argument("gamma: shape and scale must be positive");
    }
    if (shape_k < 1.0) {
        const double boost = std::pow(uniform(), 1.0 / shape_k);
        return gamma(shape_k + 1.0, scale_theta) * boost;
    }
    const double d = shape_k - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v * scale_theta;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale_theta;
    }
}

}  // namespace promptforge
