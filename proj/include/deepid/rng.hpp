#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <utility>

#include "error.hpp"

namespace deepid {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

// Deterministic random stream. The core generator is mt19937_64, whose output
// sequence is pinned by the standard, and all distributions are implemented
// here rather than taken from <random>, so identical seeds plus identical
// call sequences give identical values everywhere.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller; two uniforms per draw, no cached spare
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // uniform integer in [0, n); rejection-sampled so there is no modulo bias
    std::size_t index(std::size_t n) {
        if (n == 0) throw argument_error("RngState::index: n must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
        const std::uint64_t limit = max - max % span;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<std::size_t>(x % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent child stream. Derived from the original seed only, so forks
    // taken before or after other draws are the same stream.
    RngState fork(std::uint64_t stream) const {
        return RngState(detail::splitmix64(seed_ ^ detail::splitmix64(stream + 0x51ed5eed)));
    }

    template <class RandomIt>
    void shuffle(RandomIt first, RandomIt last) {
        const std::size_t n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(first[i - 1], first[index(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace deepid
