#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dticalib/error.hpp"
#include "dticalib/tensor_core.hpp"

namespace dticalib {

/// Signals are clamped to this floor before taking logs.
inline constexpr double kSignalFloor = 1e-8;
/// Designs with a larger condition number are treated as rank deficient.
inline constexpr double kMaxConditionNumber = 1e12;

enum class FitMethod { ols, wlls, cwlls };

inline std::string_view to_string(FitMethod m) {
    switch (m) {
        case FitMethod::ols: return "ols";
        case FitMethod::wlls: return "wlls";
        case FitMethod::cwlls: return "cwlls";
    }
    return "?";
}

inline FitMethod parse_fit_method(std::string_view s) {
    if (s == "ols") return FitMethod::ols;
    if (s == "wlls") return FitMethod::wlls;
    if (s == "cwlls") return FitMethod::cwlls;
    throw UsageError("unknown fit method '" + std::string(s) + "'");
}

struct FitResult {
    DiffusionTensor tensor;
    /// Observed minus fitted log signal, unweighted.
    std::vector<double> residuals_log;
    std::vector<double> fitted_log;
    /// Diagonal of the (weighted) hat matrix; sums to kNumParams.
    std::vector<double> leverage;
    bool constrained = false;
    double condition_number = 0.0;
};

namespace detail {

struct LinearSolve {
    Eigen::VectorXd beta;
    Eigen::VectorXd leverage;
    double condition_number = 0.0;
};

inline LinearSolve qr_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const Eigen::VectorXd* sqrt_weights) {
    Eigen::MatrixXd xw = x;
    Eigen::VectorXd yw = y;
    if (sqrt_weights) {
        xw = sqrt_weights->asDiagonal() * x;
        yw = sqrt_weights->cwiseProduct(y);
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(xw);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(kNumParams).triangularView<Eigen::Upper>();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(r);
    const auto& sv = svd.singularValues();
    const double cond = sv[kNumParams - 1] > 0.0 ? sv[0] / sv[kNumParams - 1]
                                                 : std::numeric_limits<double>::infinity();
    if (!(cond <= kMaxConditionNumber)) throw DataError("degenerate gradient scheme");

    LinearSolve out;
    out.condition_number = cond;
    out.beta = qr.solve(yw);
    const Eigen::MatrixXd q =
        qr.householderQ() * Eigen::MatrixXd::Identity(x.rows(), kNumParams);
    out.leverage = q.rowwise().squaredNorm();
    return out;
}

inline Eigen::VectorXd log_signals(std::span<const double> signals, Eigen::Index m) {
    if (static_cast<Eigen::Index>(signals.size()) != m)
        throw DataError("signal count " + std::to_string(signals.size()) +
                        " does not match scheme size " + std::to_string(m));
    if (m < kNumParams)
        throw DataError("at least 7 measurements required, got " + std::to_string(m));
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double s = signals[static_cast<std::size_t>(i)];
        if (std::isnan(s)) throw DataError("non-finite input");
        y[i] = std::log(std::max(s, kSignalFloor));
    }
    return y;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

inline FitResult make_result(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                             const LinearSolve& solve) {
    FitResult r;
    r.tensor = DiffusionTensor::from_params(solve.beta);
    const Eigen::VectorXd fitted = x * solve.beta;
    r.fitted_log = to_std(fitted);
    r.residuals_log = to_std(y - fitted);
    r.leverage = to_std(solve.leverage);
    r.condition_number = solve.condition_number;
    return r;
}

}  // namespace detail

/// Ordinary least squares on log signals.
inline FitResult fit_ols(std::span<const double> signals, const Eigen::MatrixXd& design) {
    const Eigen::VectorXd y = detail::log_signals(signals, design.rows());
    return detail::make_result(design, y, detail::qr_solve(design, y, nullptr));
}

/// Two-pass weighted fit: OLS, then weights exp(2 * fitted log signal).
inline FitResult fit_wlls(std::span<const double> signals, const Eigen::MatrixXd& design) {
    const Eigen::VectorXd y = detail::log_signals(signals, design.rows());
    const auto ols = detail::qr_solve(design, y, nullptr);
    const Eigen::VectorXd fitted = design * ols.beta;
    // Weights scaled by their maximum; the solution and hat matrix do not
    // depend on a common factor.
    const Eigen::VectorXd sqrt_w = (fitted.array() - fitted.maxCoeff()).exp().matrix();
    return detail::make_result(design, y, detail::qr_solve(design, y, &sqrt_w));
}

/// Eigenvalue floor applied by the constrained fit.
inline double eigenvalue_floor(double md) { return 1e-6 * std::max(md, 1e-5); }

/// WLLS followed by projection onto tensors with eigenvalues >= floor.
inline FitResult fit_cwlls(std::span<const double> signals, const Eigen::MatrixXd& design) {
    FitResult r = fit_wlls(signals, design);
    r.constrained = true;
    const auto es = eig3(r.tensor.matrix());
    const double floor = eigenvalue_floor(es.values.mean());
    if (es.values.minCoeff() >= floor) return r;

    const Vec3 clamped = es.values.cwiseMax(floor);
    r.tensor = tensor_from_eigen(clamped, es.vectors, r.tensor.ln_s0);
    const Eigen::VectorXd fitted = design * r.tensor.params();
    for (Eigen::Index i = 0; i < fitted.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const double observed = r.fitted_log[k] + r.residuals_log[k];
        r.fitted_log[k] = fitted[i];
        r.residuals_log[k] = observed - fitted[i];
    }
    return r;
}

inline FitResult fit(FitMethod method, std::span<const double> signals,
                     const Eigen::MatrixXd& design) {
    switch (method) {
        case FitMethod::ols: return fit_ols(signals, design);
        case FitMethod::wlls: return fit_wlls(signals, design);
        case FitMethod::cwlls: break;
    }
    return fit_cwlls(signals, design);
}

inline FitResult fit_ols(std::span<const double> signals, const GradientScheme& scheme) {
    scheme.validate();
    return fit_ols(signals, design_matrix(scheme));
}

inline FitResult fit_wlls(std::span<const double> signals, const GradientScheme& scheme) {
    scheme.validate();
    return fit_wlls(signals, design_matrix(scheme));
}

inline FitResult fit_cwlls(std::span<const double> signals, const GradientScheme& scheme) {
    scheme.validate();
    return fit_cwlls(signals, design_matrix(scheme));
}

}  // namespace dticalib
