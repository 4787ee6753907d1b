#pragma once

#include <iomanip>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dticalib/calibration.hpp"

namespace dticalib::io {

/// CSV with header `beta,mpiw,mpiw_norm,picp`, one row per grid point.
inline void write_curve_csv(std::ostream& os, const CalibrationCurve& c) {
    os << "beta,mpiw,mpiw_norm,picp\n" << std::setprecision(17);
    for (std::size_t k = 0; k < c.beta.size(); ++k)
        os << c.beta[k] << ',' << c.mpiw[k] << ',' << c.mpiw_norm[k] << ',' << c.picp[k] << '\n';
}

inline nlohmann::json metrics_json(const CalibrationMetrics& m) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : m.bins.bins) bins.push_back({{"rmv", b.rmv}, {"rmse", b.rmse}, {"count", b.count}});
    return {{"ence", m.ence}, {"aucc", m.aucc}, {"n", m.n}, {"bins", bins}};
}

inline nlohmann::json isotonic_json(const IsotonicMap& map) {
    return {{"breakpoints", map.breakpoints}, {"values", map.values}};
}

inline IsotonicMap isotonic_from_json(const nlohmann::json& j) {
    IsotonicMap map;
    map.breakpoints = j.at("breakpoints").get<std::vector<double>>();
    map.values = j.at("values").get<std::vector<double>>();
    if (map.breakpoints.size() != map.values.size() || map.breakpoints.empty())
        throw DataError("malformed isotonic map");
    return map;
}

}  // namespace dticalib::io
