#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace clb {

// Seed mixer (splitmix64 finalizer). Used to derive independent child
// seeds from a base seed plus a stream tag, so that consumers drawing
// from one stream never shift another stream's sequence.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return mix64(base ^ mix64(tag));
}

// Deterministic RNG wrapper. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; all derived draws below are
// hand-rolled so results are identical across platforms and library
// versions (std::uniform_*_distribution makes no such guarantee).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Standard normal via Box-Muller (cosine branch). Uses 1-u so the
    // log argument is in (0, 1].
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Unbiased integer in [0, n) by rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t x = next();
            if (x >= threshold) return x % n;
        }
    }

    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(below(static_cast<std::uint64_t>(n)));
    }

    // Fisher-Yates shuffle, iterating from the back. Draw order is part
    // of the engine's determinism contract: a given seed always yields
    // the same permutation.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// Fixed stream tags. Keeping each concern on its own stream makes
// behavioural reductions exact: e.g. disabling replay must not change
// how the shuffle stream advances.
namespace rng_stream {
constexpr std::uint64_t world = 0x10;
constexpr std::uint64_t model_init = 0x20;
constexpr std::uint64_t shuffle = 0x30;
constexpr std::uint64_t memory = 0x40;
constexpr std::uint64_t replay = 0x50;
constexpr std::uint64_t order = 0x60;
constexpr std::uint64_t examples = 0x70;
}  // namespace rng_stream

}  // namespace clb
