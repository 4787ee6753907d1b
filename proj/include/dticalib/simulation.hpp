#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "dticalib/bootstrap.hpp"
#include "dticalib/error.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/rng.hpp"
#include "dticalib/tensor_core.hpp"

namespace dticalib {

/// Directions spread over the upper hemisphere on a Fibonacci spiral, all
/// at `bvalue`, preceded by `n_b0` unweighted measurements.
inline GradientScheme hemisphere_scheme(int n_directions, double bvalue, int n_b0 = 5) {
    GradientScheme s;
    for (int i = 0; i < n_b0; ++i) {
        s.directions.push_back(Vec3::Zero());
        s.bvalues.push_back(0.0);
    }
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n_directions; ++i) {
        const double z = (i + 0.5) / n_directions;
        const double r = std::sqrt(1.0 - z * z);
        const double phi = golden * i;
        s.directions.push_back(Vec3(r * std::cos(phi), r * std::sin(phi), z).normalized());
        s.bvalues.push_back(bvalue);
    }
    return s;
}

inline Vec3 random_unit_vector(Stream& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

/// Haar-uniform rotation from a random unit quaternion.
inline Mat3 random_rotation(Stream& rng) {
    const double u1 = rng.uniform();
    const double u2 = 2.0 * std::numbers::pi * rng.uniform();
    const double u3 = 2.0 * std::numbers::pi * rng.uniform();
    const double a = std::sqrt(1.0 - u1);
    const double b = std::sqrt(u1);
    const Eigen::Quaterniond q(b * std::cos(u3), a * std::sin(u2), a * std::cos(u2),
                               b * std::sin(u3));
    return q.normalized().toRotationMatrix();
}

/// Orthonormal frame whose first column is `axis`.
inline Mat3 frame_from_axis(const Vec3& axis) {
    const Vec3 e0 = axis.normalized();
    const Vec3 helper = std::abs(e0.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 e1 = e0.cross(helper).normalized();
    const Vec3 e2 = e0.cross(e1);
    Mat3 f;
    f.col(0) = e0;
    f.col(1) = e1;
    f.col(2) = e2;
    return f;
}

namespace detail {
// Half-spread delta solving FA(md + 2d, md - d, md - d) = fa; the oblate
// family (md + d, md + d, md - 2d) has the same FA for the same delta.
inline double axial_delta(double fa, double md) {
    return md * fa * std::sqrt(3.0 / (9.0 - 6.0 * fa * fa));
}
}  // namespace detail

/// Eigenvalues (a, b, b) with a >= b, given FA and MD.
inline Vec3 prolate_eigenvalues(double fa, double md) {
    if (!(fa >= 0.0 && fa < 1.0) || !(md > 0.0))
        throw DataError("infeasible prolate tensor: need 0 <= fa < 1 and md > 0");
    const double d = detail::axial_delta(fa, md);
    return {md + 2.0 * d, md - d, md - d};
}

/// Eigenvalues (a, a, b) with a >= b, given FA and MD. Feasible only for
/// FA < 1/sqrt(2).
inline Vec3 oblate_eigenvalues(double fa, double md) {
    if (!(fa >= 0.0 && fa < 1.0) || !(md > 0.0))
        throw DataError("infeasible oblate tensor: need 0 <= fa < 1 and md > 0");
    const double d = detail::axial_delta(fa, md);
    const double minor = md - 2.0 * d;
    if (!(minor > 0.0))
        throw DataError("infeasible oblate tensor: fa " + std::to_string(fa) +
                        " requires a negative eigenvalue");
    return {md + d, md + d, minor};
}

namespace phantom {
struct Fixed {
    DiffusionTensor tensor;
};
struct Prolate {
    double fa = 0.8;
    double md = 0.9e-3;
};
struct Oblate {
    double fa = 0.5;
    double md = 0.9e-3;
};
struct RandomSpd {
    double eig_min = 0.1e-3;
    double eig_max = 3.0e-3;
};
/// Population A has eigenvalues uniform in [eig_min, eig_max]; population B
/// (the trailing `shifted_fraction` of voxels) has them scaled by `shift`.
struct TwoPopulation {
    double eig_min = 0.2e-3;
    double eig_max = 1.8e-3;
    double shift = 1.8;
    double shifted_fraction = 0.5;
};
}  // namespace phantom

using TensorGenerator = std::variant<phantom::Fixed, phantom::Prolate, phantom::Oblate,
                                     phantom::RandomSpd, phantom::TwoPopulation>;

enum class Orientation { fixed_axis, uniform };

/// Sentinel for noiseless simulation.
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

struct PhantomSpec {
    std::size_t n_voxels = 100;
    TensorGenerator generator = phantom::Prolate{};
    Orientation orientation = Orientation::uniform;
    Vec3 axis = Vec3::UnitX();
    GradientScheme scheme;
    double snr_db = 30.0;
    /// When set, each voxel draws its SNR uniformly from [snr_db, snr_db_max].
    std::optional<double> snr_db_max;
    double s0 = 1.0;
    std::uint64_t seed = 0;
};

struct VoxelRecord {
    std::vector<double> signals;
    std::optional<DiffusionTensor> truth;
    double s0 = 1.0;
    double snr_db = kNoiselessSnr;
    int population = 0;
    std::optional<DiffusionTensor> fitted;
    std::optional<UncertaintyBundle> uncertainty;
};

/// Noise standard deviation for amplitude SNR in dB relative to s0.
inline double noise_sigma(double snr_db, double s0 = 1.0) {
    if (std::isinf(snr_db) && snr_db > 0.0) return 0.0;
    return s0 * std::pow(10.0, -snr_db / 20.0);
}

/// Magnitude of the signal with complex Gaussian noise added.
inline double add_rician(double signal, double snr_db, Stream& rng, double s0 = 1.0) {
    const double sigma = noise_sigma(snr_db, s0);
    if (sigma == 0.0) return signal;
    const double re = signal + sigma * rng.normal();
    const double im = sigma * rng.normal();
    return std::sqrt(re * re + im * im);
}

inline std::vector<double> noisy_signals(const DiffusionTensor& tensor,
                                         const GradientScheme& scheme, double snr_db,
                                         Stream& rng, double s0 = 1.0) {
    auto s = predict_signal(tensor, scheme);
    for (double& v : s) v = add_rician(v * s0, snr_db, rng, s0);
    return s;
}

namespace detail {

inline void validate_snr(double snr_db) {
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
        throw DataError("invalid snr_db");
}

struct GeneratedTensor {
    DiffusionTensor tensor;
    int population = 0;
};

inline GeneratedTensor generate_tensor(const PhantomSpec& spec, std::size_t voxel,
                                       Stream& rng) {
    const auto oriented = [&](const Vec3& values) {
        const Mat3 frame = spec.orientation == Orientation::uniform
                               ? random_rotation(rng)
                               : frame_from_axis(spec.axis);
        return tensor_from_eigen(values, frame);
    };
    return std::visit(
        [&](const auto& g) -> GeneratedTensor {
            using G = std::decay_t<decltype(g)>;
            if constexpr (std::is_same_v<G, phantom::Fixed>) {
                return {g.tensor, 0};
            } else if constexpr (std::is_same_v<G, phantom::Prolate>) {
                return {oriented(prolate_eigenvalues(g.fa, g.md)), 0};
            } else if constexpr (std::is_same_v<G, phantom::Oblate>) {
                // Distinct (minor) axis goes on the frame's first column.
                const Vec3 ev = oblate_eigenvalues(g.fa, g.md);
                return {oriented(Vec3(ev[2], ev[0], ev[1])), 0};
            } else if constexpr (std::is_same_v<G, phantom::RandomSpd>) {
                if (!(g.eig_min > 0.0 && g.eig_max >= g.eig_min))
                    throw DataError("invalid eigenvalue range");
                Vec3 ev(rng.uniform(g.eig_min, g.eig_max), rng.uniform(g.eig_min, g.eig_max),
                        rng.uniform(g.eig_min, g.eig_max));
                std::sort(ev.data(), ev.data() + 3, std::greater<>());
                return {oriented(ev), 0};
            } else {
                if (!(g.eig_min > 0.0 && g.eig_max >= g.eig_min && g.shift > 0.0))
                    throw DataError("invalid two-population parameters");
                const auto n_a = static_cast<std::size_t>(
                    std::llround(static_cast<double>(spec.n_voxels) * (1.0 - g.shifted_fraction)));
                const int pop = voxel >= n_a ? 1 : 0;
                const double scale = pop == 1 ? g.shift : 1.0;
                Vec3 ev(rng.uniform(g.eig_min, g.eig_max), rng.uniform(g.eig_min, g.eig_max),
                        rng.uniform(g.eig_min, g.eig_max));
                std::sort(ev.data(), ev.data() + 3, std::greater<>());
                return {oriented(ev * scale), pop};
            }
        },
        spec.generator);
}

}  // namespace detail

/// Ground-truth tensors plus Rician-noisy signals. Voxel v draws its tensor
/// and noise from streams keyed by (seed, v), so the output does not depend
/// on processing order.
inline std::vector<VoxelRecord> make_phantom(const PhantomSpec& spec) {
    spec.scheme.validate();
    detail::validate_snr(spec.snr_db);
    if (spec.snr_db_max) detail::validate_snr(*spec.snr_db_max);
    std::vector<VoxelRecord> out(spec.n_voxels);
    for (std::size_t v = 0; v < spec.n_voxels; ++v) {
        Stream tensor_rng(stream_key(spec.seed, v, 0x7e45));
        Stream noise_rng(stream_key(spec.seed, v, 0x401e));
        auto gen = detail::generate_tensor(spec, v, tensor_rng);
        VoxelRecord& r = out[v];
        r.truth = gen.tensor;
        r.population = gen.population;
        r.s0 = spec.s0;
        r.snr_db = spec.snr_db_max ? tensor_rng.uniform(spec.snr_db, *spec.snr_db_max)
                                   : spec.snr_db;
        r.signals = noisy_signals(gen.tensor, spec.scheme, r.snr_db, noise_rng, spec.s0);
    }
    return out;
}

/// Gold-standard uncertainty: empirical spread of CWLLS fits over
/// independent noise realizations of one tensor.
inline UncertaintyBundle monte_carlo_oracle(const DiffusionTensor& tensor,
                                            const GradientScheme& scheme, double snr_db,
                                            int n_realizations, std::uint64_t seed,
                                            FitMethod estimator = FitMethod::cwlls) {
    if (n_realizations < 100)
        throw DataError("monte carlo oracle needs at least 100 realizations");
    scheme.validate();
    detail::validate_snr(snr_db);
    const Eigen::MatrixXd design = design_matrix(scheme);
    TensorSampleSet samples;
    samples.source = SampleSource::monte_carlo_oracle;
    samples.tensors.reserve(static_cast<std::size_t>(n_realizations));
    for (int r = 0; r < n_realizations; ++r) {
        Stream rng(stream_key(seed, 0x0AC1E, static_cast<std::uint64_t>(r)));
        const auto signals = noisy_signals(tensor, scheme, snr_db, rng);
        try {
            samples.tensors.push_back(fit(estimator, signals, design).tensor);
        } catch (const DataError& e) {
            throw DataError("monte carlo realization " + std::to_string(r) + ": " + e.what());
        }
    }
    return summarize_uncertainty(samples);
}

}  // namespace dticalib
