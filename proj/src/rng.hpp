#ifndef TDCAL_RNG_HPP
#define TDCAL_RNG_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "errors.hpp"

namespace tdcal {

// Deterministic generator with hand-rolled distributions. The standard
// library distributions are implementation-defined, which would break the
// byte-identical output contract across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // splitmix64 warm-up so nearby seeds decorrelate
        next_u64();
        next_u64();
    }

    // Independent stream derived from (seed, index); used for per-rollout
    // and per-worker streams.
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        return Rng(mix(seed, index));
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw invalid_argument_error("uniform_int: n must be positive");
        // rejection sampling to avoid modulo bias
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Index sampled proportionally to non-negative weights.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw invalid_argument_error("categorical: zero-support distribution");
        double u = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        // u landed on the accumulated rounding tail; last positive entry wins
        for (std::size_t i = weights.size(); i-- > 0;)
            if (weights[i] > 0.0) return static_cast<int>(i);
        return 0;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace tdcal

#endif
