#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace crel {

// SplitMix64 generator. All randomness in the pipeline flows through this
// type so that runs are reproducible across platforms; the standard
// <random> distributions are implementation-defined and would break the
// bitwise-determinism contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive. Requires lo <= hi.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller. Second value of each pair is discarded
    // so the draw count per call is fixed.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Derives an independent stream for a named pipeline stage. Used by the
    // CLI so one root seed covers every command deterministically.
    static std::uint64_t derive(std::uint64_t root, std::uint64_t stream) {
        Rng r(root ^ (0xA5A5A5A5A5A5A5A5ULL * (stream + 1)));
        return r.next_u64();
    }

private:
    std::uint64_t state_;
};

} // namespace crel
