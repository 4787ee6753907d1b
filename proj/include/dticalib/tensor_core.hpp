#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dticalib/error.hpp"

namespace dticalib {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Number of fitted parameters: six tensor elements plus ln S0.
inline constexpr int kNumParams = 7;

/// Acquisition table: one unit direction and one b-value (s/mm^2) per
/// measurement. b=0 entries may carry the zero vector.
struct GradientScheme {
    std::vector<Vec3> directions;
    std::vector<double> bvalues;

    [[nodiscard]] std::size_t size() const noexcept { return bvalues.size(); }

    /// Throws DataError if the invariants do not hold.
    void validate() const {
        if (directions.size() != bvalues.size())
            throw DataError("invalid gradient scheme: " + std::to_string(directions.size()) +
                            " directions vs " + std::to_string(bvalues.size()) + " b-values");
        for (std::size_t i = 0; i < bvalues.size(); ++i) {
            const double b = bvalues[i];
            if (!std::isfinite(b) || b < 0.0)
                throw DataError("invalid gradient scheme: b-value " + std::to_string(i) +
                                " is negative or non-finite");
            const double norm = directions[i].norm();
            const bool zero_ok = b == 0.0 && norm == 0.0;
            if (!zero_ok && std::abs(norm - 1.0) > 1e-9)
                throw DataError("invalid gradient scheme: direction " + std::to_string(i) +
                                " is not unit length");
        }
    }
};

/// Symmetric diffusion tensor (mm^2/s) stored as its six unique elements
/// in the order Dxx, Dyy, Dzz, Dxy, Dxz, Dyz, plus the log baseline signal.
struct DiffusionTensor {
    std::array<double, 6> elements{};
    double ln_s0 = 0.0;

    [[nodiscard]] Mat3 matrix() const {
        const auto& e = elements;
        Mat3 m;
        m << e[0], e[3], e[4],
             e[3], e[1], e[5],
             e[4], e[5], e[2];
        return m;
    }

    /// Builds a tensor from the upper triangle of `m`.
    static DiffusionTensor from_matrix(const Mat3& m, double ln_s0 = 0.0) {
        return {{m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)}, ln_s0};
    }

    /// Parameter vector in design-matrix column order.
    [[nodiscard]] Eigen::Matrix<double, kNumParams, 1> params() const {
        Eigen::Matrix<double, kNumParams, 1> p;
        for (int i = 0; i < 6; ++i) p[i] = elements[static_cast<std::size_t>(i)];
        p[6] = ln_s0;
        return p;
    }

    static DiffusionTensor from_params(const Eigen::Ref<const Eigen::VectorXd>& p) {
        DiffusionTensor t;
        for (int i = 0; i < 6; ++i) t.elements[static_cast<std::size_t>(i)] = p[i];
        t.ln_s0 = p[6];
        return t;
    }

    [[nodiscard]] bool finite() const noexcept {
        return std::isfinite(ln_s0) &&
               std::all_of(elements.begin(), elements.end(),
                           [](double v) { return std::isfinite(v); });
    }
};

/// Eigen-system and scalar maps of a tensor. Eigenvalues are sorted in
/// descending order; eigenvectors are the matching columns.
struct TensorScalars {
    Vec3 eigenvalues = Vec3::Zero();
    Mat3 eigenvectors = Mat3::Identity();
    double fa = 0.0;
    double md = 0.0;

    /// Sign-ambiguous unit vector of the largest eigenvalue.
    [[nodiscard]] Vec3 principal_direction() const { return eigenvectors.col(0); }
};

struct SymmetricEigen3 {
    Vec3 values;   // descending
    Mat3 vectors;  // columns, orthonormal
};

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix. Only the
/// upper triangle is read.
inline SymmetricEigen3 eig3(const Mat3& input) {
    Mat3 a = input.selfadjointView<Eigen::Upper>();
    Mat3 v = Mat3::Identity();
    constexpr int kMaxSweeps = 64;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
        const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
        if (off == 0.0 || off <= 1e-36 * diag) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // A <- J^T A J with the rotation in the (p, q) plane.
                for (int k = 0; k < 3; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = 0.0;
                for (int k = 0; k < 3; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) > a(j, j); });
    SymmetricEigen3 out;
    for (int k = 0; k < 3; ++k) {
        out.values[k] = a(order[k], order[k]);
        out.vectors.col(k) = v.col(order[k]);
    }
    return out;
}

/// FA = sqrt(3/2 * sum (l_i - mean)^2 / sum l_i^2); zero for the zero tensor.
inline double fractional_anisotropy(const Vec3& eigenvalues) {
    const double denom = eigenvalues.squaredNorm();
    if (denom == 0.0) return 0.0;
    const double mean = eigenvalues.mean();
    const double dev = (eigenvalues.array() - mean).square().sum();
    return std::sqrt(1.5 * dev / denom);
}

inline TensorScalars eig3_sym(const DiffusionTensor& tensor) {
    const auto es = eig3(tensor.matrix());
    TensorScalars s;
    s.eigenvalues = es.values;
    s.eigenvectors = es.vectors;
    s.fa = fractional_anisotropy(es.values);
    s.md = es.values.mean();
    return s;
}

/// V diag(values) V^T as a tensor, keeping ln_s0.
inline DiffusionTensor tensor_from_eigen(const Vec3& values, const Mat3& vectors,
                                         double ln_s0 = 0.0) {
    const Mat3 m = vectors * values.asDiagonal() * vectors.transpose();
    return DiffusionTensor::from_matrix(m, ln_s0);
}

/// Normalized signals S/S0 = exp(-b q^T D q). b=0 entries yield exactly 1.
inline std::vector<double> predict_signal(const DiffusionTensor& tensor,
                                          const GradientScheme& scheme) {
    if (!tensor.finite()) throw DataError("non-finite input");
    const Mat3 d = tensor.matrix();
    std::vector<double> out(scheme.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double b = scheme.bvalues[i];
        if (b == 0.0) {
            out[i] = 1.0;
            continue;
        }
        const Vec3& q = scheme.directions[i];
        out[i] = std::exp(-b * q.dot(d * q));
    }
    return out;
}

/// Log-linear design: row i times (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz, ln S0)
/// equals ln S_i for noiseless data.
inline Eigen::MatrixXd design_matrix(const GradientScheme& scheme) {
    const auto m = static_cast<Eigen::Index>(scheme.size());
    Eigen::MatrixXd x(m, kNumParams);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double b = scheme.bvalues[static_cast<std::size_t>(i)];
        const Vec3& g = scheme.directions[static_cast<std::size_t>(i)];
        x(i, 0) = -b * g.x() * g.x();
        x(i, 1) = -b * g.y() * g.y();
        x(i, 2) = -b * g.z() * g.z();
        x(i, 3) = -2.0 * b * g.x() * g.y();
        x(i, 4) = -2.0 * b * g.x() * g.z();
        x(i, 5) = -2.0 * b * g.y() * g.z();
        x(i, 6) = 1.0;
    }
    return x;
}

}  // namespace dticalib
