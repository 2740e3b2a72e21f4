#pragma once

// Seeded random streams. Everything here is defined bit-for-bit (no
// implementation-defined std distributions) so results reproduce across
// standard libraries.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace biasaudit {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives the seed of substream `ordinal` from a parent seed:
/// splitmix64(splitmix64(seed) ^ splitmix64(ordinal + golden)).
/// Replicate r, stratum s, pipeline stage k all use this, so any substream can
/// be regenerated alone.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t ordinal) noexcept {
    return splitmix64(splitmix64(seed) ^ splitmix64(ordinal + 0x632BE59BD9B4E019ULL));
}

/// Named pipeline stages for master-seed derivation.
enum class Stage : std::uint64_t {
    Subsample = 1,
    OneScan = 2,
    Tsne = 3,
    Resample = 4,
    Bootstrap = 5,
    Probe = 6,
    Synth = 7,
};

constexpr std::uint64_t stage_seed(std::uint64_t master, Stage s) noexcept {
    return mix_seed(master, static_cast<std::uint64_t>(s));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::size_t index(std::size_t n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % bound);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace biasaudit
