#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dticalib {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream key from (seed, a, b), e.g. (seed, voxel,
/// replicate). Streams keyed this way make results independent of the order
/// in which voxels or replicates are processed.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a = 0,
                                   std::uint64_t b = 0) noexcept {
    return mix64(mix64(mix64(seed) ^ (a + 0x632BE59BD9B4E019ULL)) ^
                 (b + 0x85157AF5ULL));
}

/// Counter-based generator: the n-th output is mix64(key + n * golden).
/// Gaussian draws use Box-Muller so the sequence does not depend on the
/// standard library's distribution implementations.
class Stream {
public:
    explicit Stream(std::uint64_t key) noexcept : key_(key) {}

    std::uint64_t next_u64() noexcept {
        return mix64(key_ + 0x9E3779B97F4A7C15ULL * counter_++);
    }

    /// Uniform on [0, 1).
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform on (0, 1].
    double uniform_open0() noexcept {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_open0()));
        const double phi = 2.0 * std::numbers::pi * uniform();
        spare_ = r * std::sin(phi);
        has_spare_ = true;
        return r * std::cos(phi);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// +1 or -1 with equal probability.
    double rademacher() noexcept { return (next_u64() >> 63) != 0 ? 1.0 : -1.0; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dticalib
