#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace camal {

// Deterministic RNG with a fully specified bit stream. std::shuffle and the
// std distributions are implementation-defined, so everything seeded here
// goes through this class to keep runs reproducible across stdlibs.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    // splitmix64 step
    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n >= 1; rejection sampling for exactness
    uint64_t uniform_int(uint64_t n) {
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal via Box-Muller (always consumes two draws)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent substream derived from (seed, stream id); used for
    // schedule-independent parallel work such as bootstrap resamples.
    static Rng substream(uint64_t seed, uint64_t stream) {
        Rng mix(seed ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
        mix.next_u64();
        return Rng(mix.next_u64());
    }

private:
    uint64_t state_;
};

}  // namespace camal
