#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dticalib/error.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/rng.hpp"
#include "dticalib/tensor_core.hpp"

namespace dticalib {

enum class SampleSource { wild_bootstrap, mc_dropout, monte_carlo_oracle };

/// Replicate tensors for one voxel.
struct TensorSampleSet {
    std::vector<DiffusionTensor> tensors;
    SampleSource source = SampleSource::wild_bootstrap;

    [[nodiscard]] std::size_t size() const noexcept { return tensors.size(); }
};

struct UncertaintyBundle {
    double theta95 = 0.0;   // degrees
    double sigma_fa = 0.0;
    double sigma_md = 0.0;  // mm^2/s
    std::optional<double> aleatoric_u;
};

inline constexpr int kDefaultBootstrapIterations = 1000;

/// Wild bootstrap around the CWLLS fit. Replicate k uses Rademacher signs
/// from stream (seed, voxel, k) and HC2-scaled log residuals
/// r_i / sqrt(1 - h_i). A row with h_i = 1 is refused: its residual is
/// identically zero, so its noise would never be resampled.
inline TensorSampleSet wild_bootstrap(std::span<const double> signals,
                                      const Eigen::MatrixXd& design, int iterations,
                                      std::uint64_t seed, std::uint64_t voxel = 0) {
    if (iterations < 2) throw DataError("wild bootstrap needs at least 2 iterations");
    const FitResult base = fit_cwlls(signals, design);
    const std::size_t m = base.fitted_log.size();
    std::vector<double> scaled(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double h = base.leverage[i];
        if (h >= 1.0 - 1e-9)
            throw DataError("saturated leverage at measurement " + std::to_string(i) +
                            " (a lone b=0 image on a single shell is always saturated)");
        scaled[i] = base.residuals_log[i] / std::sqrt(1.0 - h);
    }

    TensorSampleSet out;
    out.source = SampleSource::wild_bootstrap;
    out.tensors.reserve(static_cast<std::size_t>(iterations));
    std::vector<double> resampled(m);
    for (int k = 0; k < iterations; ++k) {
        Stream rng(stream_key(seed, voxel, static_cast<std::uint64_t>(k)));
        for (std::size_t i = 0; i < m; ++i)
            resampled[i] = std::exp(base.fitted_log[i] + rng.rademacher() * scaled[i]);
        out.tensors.push_back(fit_cwlls(resampled, design).tensor);
    }
    return out;
}

inline TensorSampleSet wild_bootstrap(std::span<const double> signals,
                                      const GradientScheme& scheme, int iterations,
                                      std::uint64_t seed, std::uint64_t voxel = 0) {
    scheme.validate();
    return wild_bootstrap(signals, design_matrix(scheme), iterations, seed, voxel);
}

/// Principal eigenvector of the mean dyad (1/K) sum v_k v_k^T of unit
/// directions. Sign of each v_k is irrelevant.
inline Vec3 mean_dyadic_axis(std::span<const Vec3> directions) {
    if (directions.empty()) throw DataError("mean dyadic axis of an empty set");
    Mat3 dyad = Mat3::Zero();
    for (const Vec3& v : directions) dyad.noalias() += v * v.transpose();
    dyad /= static_cast<double>(directions.size());
    return eig3(dyad).vectors.col(0);
}

inline std::vector<Vec3> principal_directions(const TensorSampleSet& samples) {
    std::vector<Vec3> dirs;
    dirs.reserve(samples.size());
    for (const auto& t : samples.tensors) dirs.push_back(eig3(t.matrix()).vectors.col(0));
    return dirs;
}

inline Vec3 mean_dyadic(const TensorSampleSet& samples) {
    return mean_dyadic_axis(principal_directions(samples));
}

/// Percentile by linear interpolation between closest ranks: rank
/// p/100 * (n-1) over the sorted values.
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw DataError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

/// Folded angle between two axes, in degrees within [0, 90].
inline double axis_angle_deg(const Vec3& a, const Vec3& b) {
    const double c = std::min(1.0, std::abs(a.dot(b)) / (a.norm() * b.norm()));
    return std::acos(c) * 180.0 / std::numbers::pi;
}

/// 95th percentile of the folded angles between each direction and the
/// mean dyadic axis.
inline double cone_angle_95(std::span<const Vec3> directions) {
    const Vec3 axis = mean_dyadic_axis(directions);
    std::vector<double> angles;
    angles.reserve(directions.size());
    for (const Vec3& v : directions) angles.push_back(axis_angle_deg(v, axis));
    return percentile(std::move(angles), 95.0);
}

inline double cone_angle_95(const TensorSampleSet& samples) {
    return cone_angle_95(principal_directions(samples));
}

/// Population standard deviation (two-pass).
inline double population_stddev(std::span<const double> values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size()));
}

/// Cone angle plus population standard deviations of FA and MD.
inline UncertaintyBundle summarize_uncertainty(const TensorSampleSet& samples) {
    if (samples.size() < 2) throw DataError("uncertainty summary needs at least 2 samples");
    std::vector<double> fa;
    std::vector<double> md;
    std::vector<Vec3> dirs;
    fa.reserve(samples.size());
    md.reserve(samples.size());
    dirs.reserve(samples.size());
    for (const auto& t : samples.tensors) {
        if (!t.finite()) throw DataError("non-finite replicate tensor");
        const auto es = eig3(t.matrix());
        fa.push_back(fractional_anisotropy(es.values));
        md.push_back(es.values.mean());
        dirs.push_back(es.vectors.col(0));
    }
    UncertaintyBundle b;
    b.sigma_fa = population_stddev(fa);
    b.sigma_md = population_stddev(md);
    b.theta95 = cone_angle_95(dirs);
    return b;
}

}  // namespace dticalib
