#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dticalib/error.hpp"

namespace dticalib {

/// Ground truth, point estimate and predicted standard deviation for one
/// sample of one scalar parameter.
struct PredictionTriple {
    double truth = 0.0;
    double estimate = 0.0;
    double sigma = 0.0;

    [[nodiscard]] double error() const noexcept { return estimate - truth; }
};

struct Bin {
    double rmv = 0.0;
    double rmse = 0.0;
    std::size_t count = 0;
};

/// Equal-population bins ordered by predicted sigma.
struct BinStats {
    std::vector<Bin> bins;

    [[nodiscard]] std::size_t total() const noexcept {
        std::size_t n = 0;
        for (const auto& b : bins) n += b.count;
        return n;
    }
};

inline constexpr int kDefaultBins = 15;
inline constexpr int kDefaultGridSize = 256;

namespace detail {

inline void validate_triples(std::span<const PredictionTriple> triples) {
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const auto& t = triples[i];
        if (!std::isfinite(t.truth) || !std::isfinite(t.estimate) || !std::isfinite(t.sigma))
            throw DataError("non-finite prediction triple at index " + std::to_string(i));
        if (t.sigma < 0.0)
            throw DataError("negative sigma at index " + std::to_string(i));
    }
}

/// Indices sorted by (sigma, original index).
inline std::vector<std::size_t> order_by_sigma(std::span<const PredictionTriple> triples) {
    std::vector<std::size_t> idx(triples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return triples[a].sigma < triples[b].sigma;
    });
    return idx;
}

}  // namespace detail

/// Sorts by sigma and splits into `n_bins` equal-population bins, the
/// remainder going one each to the leading bins. Per bin:
/// RMV = sqrt(mean sigma^2), RMSE = sqrt(mean error^2).
inline BinStats bin_rmv_rmse(std::span<const PredictionTriple> triples,
                             int n_bins = kDefaultBins) {
    if (n_bins < 1) throw DataError("bin count must be at least 1");
    detail::validate_triples(triples);
    const std::size_t n = triples.size();
    const auto k = static_cast<std::size_t>(n_bins);
    if (n < k)
        throw DataError("need at least " + std::to_string(k) + " samples for " +
                        std::to_string(k) + " bins, got " + std::to_string(n));
    const auto idx = detail::order_by_sigma(triples);
    BinStats stats;
    stats.bins.reserve(k);
    const std::size_t base = n / k;
    const std::size_t extra = n % k;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t count = base + (j < extra ? 1 : 0);
        double sv = 0.0;
        double se = 0.0;
        for (std::size_t i = pos; i < pos + count; ++i) {
            const auto& t = triples[idx[i]];
            sv += t.sigma * t.sigma;
            se += t.error() * t.error();
        }
        const auto c = static_cast<double>(count);
        stats.bins.push_back({std::sqrt(sv / c), std::sqrt(se / c), count});
        pos += count;
    }
    return stats;
}

/// Count-weighted mean of |RMV - RMSE| / RMV over bins, normalized by the
/// total sample count.
inline double ence(const BinStats& stats) {
    const std::size_t n = stats.total();
    if (n == 0) throw DataError("ence of empty bin set");
    double sum = 0.0;
    for (const auto& b : stats.bins) {
        if (b.count == 0) continue;
        if (!(b.rmv > 0.0)) throw DataError("zero-variance bin");
        sum += static_cast<double>(b.count) * std::abs(b.rmv - b.rmse) / b.rmv;
    }
    return sum / static_cast<double>(n);
}

/// PICP against interval width swept over beta in [0, beta_max], where
/// MPIW(beta_max) equals the parameter-specific cap.
struct CalibrationCurve {
    std::vector<double> beta;
    std::vector<double> mpiw;
    std::vector<double> mpiw_norm;
    std::vector<double> picp;
    double mpiw_cap = 0.0;
    double beta_max = 0.0;
    double aucc = 0.0;
};

/// Trapezoidal area under y(x).
inline double trapezoid(std::span<const double> x, std::span<const double> y) {
    double area = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i)
        area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return area;
}

inline CalibrationCurve picp_mpiw_curve(std::span<const PredictionTriple> triples,
                                        double mpiw_cap, int grid_size = kDefaultGridSize) {
    detail::validate_triples(triples);
    if (triples.empty()) throw DataError("calibration curve of an empty set");
    if (!(mpiw_cap > 0.0)) throw DataError("mpiw cap must be positive");
    if (grid_size < 2) throw DataError("grid size must be at least 2");
    double mean_sigma = 0.0;
    for (const auto& t : triples) mean_sigma += t.sigma;
    mean_sigma /= static_cast<double>(triples.size());
    if (!(mean_sigma > 0.0)) throw DataError("degenerate uncertainties");

    CalibrationCurve c;
    c.mpiw_cap = mpiw_cap;
    c.beta_max = mpiw_cap / (2.0 * mean_sigma);

    // Sample i is covered at normalized position t = beta / beta_max once
    // |error_i| <= t * beta_max * sigma_i.
    std::vector<double> threshold;
    threshold.reserve(triples.size());
    for (const auto& t : triples) {
        const double e = std::abs(t.error());
        if (e == 0.0)
            threshold.push_back(0.0);
        else if (t.sigma == 0.0)
            threshold.push_back(std::numeric_limits<double>::infinity());
        else
            threshold.push_back(e / (t.sigma * c.beta_max));
    }
    std::sort(threshold.begin(), threshold.end());

    const auto g = static_cast<std::size_t>(grid_size);
    const auto n = static_cast<double>(triples.size());
    c.beta.resize(g);
    c.mpiw.resize(g);
    c.mpiw_norm.resize(g);
    c.picp.resize(g);
    for (std::size_t k = 0; k < g; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(g - 1);
        const auto covered = std::upper_bound(threshold.begin(), threshold.end(), t) -
                             threshold.begin();
        c.beta[k] = t * c.beta_max;
        c.mpiw[k] = 2.0 * c.beta[k] * mean_sigma;
        c.mpiw_norm[k] = t;
        c.picp[k] = static_cast<double>(covered) / n;
    }
    c.aucc = trapezoid(c.mpiw_norm, c.picp);
    return c;
}

/// Weighted pool-adjacent-violators: the non-decreasing sequence closest to
/// `values` in weighted least squares.
inline std::vector<double> pava(std::span<const double> values,
                                std::span<const double> weights = {}) {
    if (!weights.empty() && weights.size() != values.size())
        throw DataError("pava: weight count does not match value count");
    struct Block {
        double mean;
        double weight;
        std::size_t size;
    };
    std::vector<Block> blocks;
    blocks.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!(w > 0.0)) throw DataError("pava: weights must be positive");
        blocks.push_back({values[i], w, 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
            const Block top = blocks.back();
            blocks.pop_back();
            Block& prev = blocks.back();
            const double w_sum = prev.weight + top.weight;
            prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / w_sum;
            prev.weight = w_sum;
            prev.size += top.size;
        }
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& b : blocks) out.insert(out.end(), b.size, b.mean);
    return out;
}

/// Non-decreasing map on the variance scale, piecewise linear between
/// breakpoints and constant beyond the ends.
struct IsotonicMap {
    std::vector<double> breakpoints;
    std::vector<double> values;

    [[nodiscard]] double operator()(double x) const {
        if (breakpoints.empty()) throw DataError("empty isotonic map");
        if (x <= breakpoints.front()) return values.front();
        if (x >= breakpoints.back()) return values.back();
        const auto hi = static_cast<std::size_t>(
            std::upper_bound(breakpoints.begin(), breakpoints.end(), x) - breakpoints.begin());
        const std::size_t lo = hi - 1;
        const double f = (x - breakpoints[lo]) / (breakpoints[hi] - breakpoints[lo]);
        return values[lo] + f * (values[hi] - values[lo]);
    }

    /// True when no bins were pooled, i.e. values strictly increase across
    /// the breakpoints.
    [[nodiscard]] bool strictly_increasing() const {
        for (std::size_t i = 1; i < values.size(); ++i)
            if (!(values[i] > values[i - 1])) return false;
        return values.size() > 1;
    }

    static IsotonicMap identity(double lo = 0.0, double hi = 1e300) {
        return {{lo, hi}, {lo, hi}};
    }
};

/// Isotonic fit of bin pairs (RMV^2, RMSE^2) weighted by bin counts.
/// Bins sharing the same RMV are merged before pooling.
inline IsotonicMap fit_isotonic(const BinStats& stats) {
    std::vector<Bin> nonempty;
    for (const auto& b : stats.bins)
        if (b.count > 0) nonempty.push_back(b);
    if (nonempty.size() < 2) throw DataError("isotonic fit needs at least 2 bins");
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> w;
    for (const auto& b : nonempty) {
        const double xv = b.rmv * b.rmv;
        const double yv = b.rmse * b.rmse;
        const auto wv = static_cast<double>(b.count);
        if (!x.empty() && xv == x.back()) {
            y.back() = (y.back() * w.back() + yv * wv) / (w.back() + wv);
            w.back() += wv;
        } else {
            x.push_back(xv);
            y.push_back(yv);
            w.push_back(wv);
        }
    }
    IsotonicMap map;
    map.breakpoints = x;
    map.values = pava(y, w);
    if (map.breakpoints.size() == 1) {
        // All bins collapsed onto one variance; keep a valid constant map.
        map.breakpoints.push_back(map.breakpoints.front());
        map.values.push_back(map.values.front());
    }
    return map;
}

inline IsotonicMap fit_isotonic(std::span<const PredictionTriple> calibration_triples,
                                int n_bins = kDefaultBins) {
    return fit_isotonic(bin_rmv_rmse(calibration_triples, n_bins));
}

/// Replaces each sigma by sqrt(map(sigma^2)).
inline std::vector<PredictionTriple> recalibrate(const IsotonicMap& map,
                                                 std::span<const PredictionTriple> triples) {
    std::vector<PredictionTriple> out(triples.begin(), triples.end());
    for (auto& t : out) t.sigma = std::sqrt(std::max(0.0, map(t.sigma * t.sigma)));
    return out;
}

struct CalibrationMetrics {
    double ence = 0.0;
    double aucc = 0.0;
    std::size_t n = 0;
    BinStats bins;
};

inline CalibrationMetrics evaluate_calibration(std::span<const PredictionTriple> triples,
                                               double mpiw_cap, int n_bins = kDefaultBins,
                                               int grid_size = kDefaultGridSize) {
    CalibrationMetrics m;
    m.bins = bin_rmv_rmse(triples, n_bins);
    m.ence = ence(m.bins);
    m.aucc = picp_mpiw_curve(triples, mpiw_cap, grid_size).aucc;
    m.n = triples.size();
    return m;
}

}  // namespace dticalib
