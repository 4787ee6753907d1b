#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "dticalib/simulation.hpp"
#include "dticalib/tensor_core.hpp"
#include "support.hpp"

using namespace dticalib;

namespace {

GradientScheme single(const Vec3& g, double b) {
    GradientScheme s;
    s.directions = {g};
    s.bvalues = {b};
    return s;
}

DiffusionTensor diag(double a, double b, double c) {
    DiffusionTensor t;
    t.elements = {a, b, c, 0.0, 0.0, 0.0};
    return t;
}

}  // namespace

TEST(PredictSignal, IsotropicIsDirectionIndependent) {
    const auto t = diag(1e-3, 1e-3, 1e-3);
    const auto scheme = hemisphere_scheme(20, 1000.0, 0);
    for (double s : predict_signal(t, scheme)) EXPECT_NEAR(s, std::exp(-1.0), 1e-15);
}

TEST(PredictSignal, ZeroBValueIsExactlyOne) {
    GradientScheme s;
    s.directions = {Vec3::Zero(), Vec3::UnitX()};
    s.bvalues = {0.0, 1000.0};
    const auto out = predict_signal(diag(1.7e-3, 0.3e-3, 0.3e-3), s);
    EXPECT_EQ(out[0], 1.0);
    EXPECT_NEAR(out[1], std::exp(-1.7), 1e-15);
}

TEST(PredictSignal, NonFiniteTensorRejected) {
    auto t = diag(1e-3, NAN, 1e-3);
    try {
        (void)predict_signal(t, single(Vec3::UnitX(), 1000.0));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite input"), std::string::npos);
    }
}

TEST(PredictSignal, ConstrainedTensorsGiveSignalsInUnitInterval) {
    Stream rng(stream_key(1, 2));
    const auto scheme = hemisphere_scheme(30, 3000.0);
    for (int i = 0; i < 50; ++i)
        for (double s : predict_signal(fixture::random_spd(rng), scheme)) {
            EXPECT_GT(s, 0.0);
            EXPECT_LE(s, 1.0);
        }
}

TEST(Eigen3, IsotropicHasZeroFa) {
    const auto s = eig3_sym(diag(0.7e-3, 0.7e-3, 0.7e-3));
    EXPECT_EQ(s.fa, 0.0);
    EXPECT_NEAR(s.md, 0.7e-3, 1e-18);
}

TEST(Eigen3, StickHasUnitFa) {
    const auto s = eig3_sym(diag(1.0, 0.0, 0.0));
    EXPECT_NEAR(s.fa, 1.0, 1e-15);
    EXPECT_NEAR(s.md, 1.0 / 3.0, 1e-15);
}

TEST(Eigen3, ProlateValues) {
    const auto s = eig3_sym(diag(1.7e-3, 0.3e-3, 0.3e-3));
    const double mean = 2.3e-3 / 3.0;
    const double dev = (1.7e-3 - mean) * (1.7e-3 - mean) + 2.0 * (0.3e-3 - mean) * (0.3e-3 - mean);
    EXPECT_NEAR(s.fa, std::sqrt(1.5 * dev / (2.89e-6 + 0.18e-6)), 1e-14);
    EXPECT_NEAR(s.fa, 0.799, 5e-4);
    EXPECT_NEAR(s.md, 0.767e-3, 1e-6);
    EXPECT_NEAR(std::abs(s.principal_direction().x()), 1.0, 1e-14);
}

TEST(Eigen3, ZeroTensorHasZeroFa) {
    const auto s = eig3_sym(DiffusionTensor{});
    EXPECT_EQ(s.fa, 0.0);
    EXPECT_EQ(s.md, 0.0);
}

TEST(Eigen3, MatchesReferenceSolver) {
    Stream rng(stream_key(3, 3));
    for (int i = 0; i < 500; ++i) {
        DiffusionTensor t;
        for (double& e : t.elements) e = rng.uniform(-2e-3, 2e-3);
        const Mat3 m = t.matrix();
        const auto mine = eig3(m);
        const Eigen::SelfAdjointEigenSolver<Mat3> ref(m);
        const double scale = m.norm();
        for (int k = 0; k < 3; ++k) {
            // Reference is ascending.
            EXPECT_NEAR(mine.values[k], ref.eigenvalues()[2 - k], 1e-13 * scale);
            const double dot = std::abs(mine.vectors.col(k).dot(ref.eigenvectors().col(2 - k)));
            EXPECT_NEAR(dot, 1.0, 1e-8);
        }
    }
}

TEST(Eigen3, OrthonormalAndReconstructs) {
    Stream rng(stream_key(4, 4));
    for (int i = 0; i < 500; ++i) {
        const DiffusionTensor t = fixture::random_spd(rng);
        const auto s = eig3_sym(t);
        const Mat3 v = s.eigenvectors;
        EXPECT_LT((v.transpose() * v - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-8);
        const Mat3 rebuilt = v * s.eigenvalues.asDiagonal() * v.transpose();
        EXPECT_LT((rebuilt - t.matrix()).norm() / t.matrix().norm(), 1e-10);
        EXPECT_GE(s.eigenvalues[0], s.eigenvalues[1]);
        EXPECT_GE(s.eigenvalues[1], s.eigenvalues[2]);
        EXPECT_NEAR(s.md, s.eigenvalues.mean(), 1e-18);
        EXPECT_GE(s.fa, 0.0);
        EXPECT_LE(s.fa, 1.0);
    }
}

TEST(Eigen3, NearDegenerateEigenvalues) {
    Stream rng(stream_key(5, 5));
    const Mat3 r = random_rotation(rng);
    const DiffusionTensor t = tensor_from_eigen(Vec3(1e-3 + 1e-15, 1e-3, 1e-3 - 1e-15), r);
    const auto s = eig3_sym(t);
    EXPECT_LT((s.eigenvectors.transpose() * s.eigenvectors - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(s.fa, 0.0, 1e-10);
}

TEST(Eigen3, RotationInvariantScalars) {
    Stream rng(stream_key(6, 6));
    for (int i = 0; i < 200; ++i) {
        const DiffusionTensor t = fixture::random_spd(rng);
        const Mat3 r = random_rotation(rng);
        const auto rotated = DiffusionTensor::from_matrix(r * t.matrix() * r.transpose());
        const auto a = eig3_sym(t);
        const auto b = eig3_sym(rotated);
        EXPECT_NEAR(a.fa, b.fa, 1e-10);
        EXPECT_NEAR(a.md, b.md, 1e-10 * a.md);
    }
}

TEST(Fa, MatchesFormulaOnRandomSpectra) {
    Stream rng(stream_key(7, 7));
    for (int i = 0; i < 100; ++i) {
        const Vec3 l(rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0));
        const double m = l.mean();
        const double num = (l.array() - m).square().sum();
        EXPECT_NEAR(fractional_anisotropy(l), std::sqrt(1.5 * num / l.squaredNorm()), 1e-14);
    }
}

TEST(DesignMatrix, RowLayout) {
    GradientScheme s;
    s.directions = {Vec3::Zero(), Vec3::UnitX()};
    s.bvalues = {0.0, 1000.0};
    const auto x = design_matrix(s);
    ASSERT_EQ(x.rows(), 2);
    ASSERT_EQ(x.cols(), kNumParams);
    Eigen::Matrix<double, 1, 7> b0;
    b0 << 0, 0, 0, 0, 0, 0, 1;
    Eigen::Matrix<double, 1, 7> bx;
    bx << -1000, 0, 0, 0, 0, 0, 1;
    EXPECT_EQ(x.row(0), b0);
    EXPECT_EQ(x.row(1), bx);
}

TEST(DesignMatrix, ConsistentWithForwardModel) {
    Stream rng(stream_key(8, 8));
    for (int i = 0; i < 20; ++i) {
        GradientScheme s;
        for (int k = 0; k < 12; ++k) {
            s.directions.push_back(random_unit_vector(rng));
            s.bvalues.push_back(rng.uniform(0.0, 3000.0));
        }
        DiffusionTensor t = fixture::random_spd(rng);
        t.ln_s0 = rng.uniform(-1.0, 3.0);
        const Eigen::VectorXd lhs = design_matrix(s) * t.params();
        const auto sig = predict_signal(t, s);
        for (int k = 0; k < 12; ++k) EXPECT_NEAR(lhs[k], std::log(sig[static_cast<std::size_t>(k)]) + t.ln_s0, 1e-12);
    }
}

TEST(GradientScheme, ValidationRejectsBadTables) {
    GradientScheme s;
    s.directions = {Vec3(1.0, 0.1, 0.0)};
    s.bvalues = {1000.0};
    EXPECT_THROW(s.validate(), DataError);
    s.directions = {Vec3::UnitX()};
    s.bvalues = {-1.0};
    EXPECT_THROW(s.validate(), DataError);
    s.bvalues = {1000.0, 0.0};
    EXPECT_THROW(s.validate(), DataError);
}

TEST(DiffusionTensor, ParamsRoundTrip) {
    DiffusionTensor t;
    t.elements = {1, 2, 3, 4, 5, 6};
    t.ln_s0 = 7;
    const auto back = DiffusionTensor::from_params(t.params());
    EXPECT_EQ(back.elements, t.elements);
    EXPECT_EQ(back.ln_s0, t.ln_s0);
    const Mat3 m = t.matrix();
    EXPECT_EQ(m, m.transpose());
    EXPECT_EQ(m(0, 1), 4);
    EXPECT_EQ(m(0, 2), 5);
    EXPECT_EQ(m(1, 2), 6);
}
