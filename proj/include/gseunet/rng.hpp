#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace gseunet {

// Deterministic RNG helpers. std::mt19937 itself is fully specified by the
// standard, but the standard distributions are not, so every mapping from
// raw draws to values is spelled out here. Identical seeds give identical
// streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    std::uint32_t next_u32() { return engine_(); }

    // Uniform in [0, 1) with 24 bits of mantissa.
    double next_unit() { return (engine_() >> 8) * (1.0 / 16777216.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    float uniform_f(float lo, float hi) { return static_cast<float>(uniform(lo, hi)); }

    // Unbiased integer in [0, n) by rejection.
    std::uint32_t below(std::uint32_t n) {
        const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
        std::uint32_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    // Standard normal via Box-Muller.
    double gaussian() {
        double u1 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(static_cast<std::uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937 engine_;
};

// Mixes two seeds into one (splitmix64 finalizer); used to derive per-epoch
// and per-sample streams from a base seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace gseunet
