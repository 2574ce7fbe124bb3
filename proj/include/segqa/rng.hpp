#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace segqa {

/// Counter-based 64-bit generator: draw i is splitmix64(seed + (i + 1) * golden).
///
/// Every draw is a pure function of (seed, counter), so a stream can be
/// reproduced from its seed alone in any language:
///   - uniform(): (x >> 11) * 2^-53, in [0, 1)
///   - normal():  Box-Muller cosine branch over two consecutive draws,
///                u1 = ((x1 >> 11) + 1) * 2^-53 in (0, 1], u2 = uniform();
///                z = sqrt(-2 ln u1) * cos(2 pi u2)
class CounterRng {
public:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(seed_ + counter_ * kGolden);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    /// Independent child stream, e.g. one per study or per fold.
    CounterRng derive(std::uint64_t stream) const {
        return CounterRng(mix(seed_ ^ mix(stream + kGolden)));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

template <class RandomIt>
void shuffle(RandomIt first, RandomIt last, CounterRng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace segqa
