#ifndef D2G_CORE_RNG_HPP
#define D2G_CORE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

#include "d2g/core/tensor.hpp"

namespace d2g {

// splitmix64 step; the workhorse for both streams and seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Counter-style seed derivation: hash_seed(base, i) opens an independent
// stream per index, so generation order and worker count never matter.
inline uint64_t hash_seed(uint64_t base, uint64_t index) {
    uint64_t s = base;
    uint64_t a = splitmix64(s);
    s = a ^ (index + 0x9E3779B97F4A7C15ull);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : s_(seed) {}

    uint64_t next_u64() { return splitmix64(s_); }

    // uniform in (0,1); never returns 0 so Box-Muller's log is safe
    double next_unit() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }
    bool bernoulli(double p) { return next_unit() < p; }

    double next_gaussian() {
        double u1 = next_unit();
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    void fill_gaussian(Tensor& t, double stddev = 1.0) {
        for (size_t i = 0; i < t.size(); ++i) t[i] = stddev * next_gaussian();
    }
    void fill_uniform(Tensor& t, double lo, double hi) {
        for (size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    }

    Tensor gaussian(int n, int c, int h, int w, double stddev = 1.0) {
        Tensor t(n, c, h, w);
        fill_gaussian(t, stddev);
        return t;
    }

    // Fisher-Yates; uniform over all permutations of [0, n)
    std::vector<uint32_t> permutation(uint32_t n) {
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = n; i > 1; --i) {
            uint32_t j = static_cast<uint32_t>(next_u64() % i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    uint64_t s_;
};

}  // namespace d2g

#endif
