#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <span>
#include <vector>

#include "dticalib/calibration.hpp"
#include "dticalib/dl_model.hpp"
#include "dticalib/rng.hpp"
#include "dticalib/simulation.hpp"
#include "dticalib/tensor_core.hpp"

#include <unistd.h>

namespace dticalib::fixture {

/// L2-optimal non-decreasing fit by enumerating every partition into
/// contiguous blocks (2^(n-1) of them). Each block takes its weighted mean.
inline std::vector<double> brute_force_isotonic(std::span<const double> y,
                                                std::span<const double> w) {
    const std::size_t n = y.size();
    if (n == 0) return {};
    std::vector<double> best;
    double best_sse = std::numeric_limits<double>::infinity();
    const std::uint64_t cuts = std::uint64_t{1} << (n - 1);
    for (std::uint64_t mask = 0; mask < cuts; ++mask) {
        std::vector<double> fit(n);
        double prev = -std::numeric_limits<double>::infinity();
        bool ok = true;
        std::size_t start = 0;
        for (std::size_t i = 0; i < n && ok; ++i) {
            const bool end_here = i == n - 1 || (mask >> i & 1U);
            if (!end_here) continue;
            double sw = 0.0;
            double sy = 0.0;
            for (std::size_t k = start; k <= i; ++k) {
                sw += w[k];
                sy += w[k] * y[k];
            }
            const double mean = sy / sw;
            if (mean < prev - 1e-15) ok = false;
            prev = mean;
            for (std::size_t k = start; k <= i; ++k) fit[k] = mean;
            start = i + 1;
        }
        if (!ok) continue;
        double sse = 0.0;
        for (std::size_t k = 0; k < n; ++k) sse += w[k] * (y[k] - fit[k]) * (y[k] - fit[k]);
        if (sse < best_sse) {
            best_sse = sse;
            best = fit;
        }
    }
    return best;
}

inline DiffusionTensor random_spd(Stream& rng, double lo = 0.1e-3, double hi = 3.0e-3) {
    const Vec3 ev(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
    return tensor_from_eigen(ev, random_rotation(rng));
}

/// Triples with error ~ N(0, sigma_true), sigma_true ~ U(lo, hi), and the
/// reported sigma inflated by `inflation`.
inline std::vector<PredictionTriple> miscalibrated_triples(std::size_t n, double inflation,
                                                           std::uint64_t seed, double lo = 0.5,
                                                           double hi = 2.0) {
    Stream rng(stream_key(seed, 0xF1C7));
    std::vector<PredictionTriple> out(n);
    for (auto& t : out) {
        const double s = rng.uniform(lo, hi);
        t.truth = rng.normal();
        t.estimate = t.truth + s * rng.normal();
        t.sigma = inflation * s;
    }
    return out;
}

inline std::vector<TrainingExample> as_examples(const std::vector<VoxelRecord>& voxels) {
    std::vector<TrainingExample> out;
    out.reserve(voxels.size());
    for (const auto& v : voxels) out.push_back({v.signals, *v.truth});
    return out;
}

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// 95th percentile of the folded angle between a fixed axis and a uniformly
/// random direction: |cos| is uniform on [0, 1].
inline double isotropic_theta95_deg() { return std::acos(0.05) * 180.0 / std::numbers::pi; }

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("dticalib_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace dticalib::fixture
