#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dticalib/error.hpp"
#include "dticalib/tensor_core.hpp"

namespace dticalib::io {

using WarningSink = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::vector<double> row;
        std::size_t pos = 0;
        int column = 0;
        while (pos < line.size()) {
            while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
            if (pos >= line.size()) break;
            ++column;
            std::size_t consumed = 0;
            const std::string token = line.substr(pos, line.find_first_of(" \t\r\n", pos) - pos);
            double v = 0.0;
            try {
                v = std::stod(token, &consumed);
            } catch (...) {
                consumed = 0;
            }
            if (consumed != token.size() || !std::isfinite(v))
                throw DataError("parse error in " + path.string() + " at line " +
                                std::to_string(line_no) + ", column " + std::to_string(column) +
                                ": '" + token + "'");
            row.push_back(v);
            pos += token.size();
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

/// Reads FSL-style tables: bval is one row of m b-values, bvec three rows
/// (x, y, z) of m components. Directions with b > 0 are normalized; a norm
/// off by more than 1e-3 is reported through `warn`.
inline GradientScheme read_bvec_bval(const std::filesystem::path& bvec_path,
                                     const std::filesystem::path& bval_path,
                                     const WarningSink& warn = {}) {
    const auto bval_rows = detail::read_rows(bval_path);
    const auto bvec_rows = detail::read_rows(bvec_path);
    if (bval_rows.size() != 1)
        throw DataError(bval_path.string() + ": expected one row of b-values, found " +
                        std::to_string(bval_rows.size()));
    if (bvec_rows.size() != 3)
        throw DataError(bvec_path.string() + ": expected three rows (x, y, z), found " +
                        std::to_string(bvec_rows.size()));
    const std::size_t m = bval_rows[0].size();
    for (const auto& r : bvec_rows)
        if (r.size() != m)
            throw DataError("bvec/bval mismatch: " + std::to_string(m) + " b-values but a bvec row has " +
                            std::to_string(r.size()) + " entries");
    GradientScheme s;
    for (std::size_t i = 0; i < m; ++i) {
        const double b = bval_rows[0][i];
        Vec3 g(bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]);
        const double norm = g.norm();
        if (b > 0.0) {
            if (norm == 0.0)
                throw DataError("measurement " + std::to_string(i) + " has b > 0 and a zero direction");
            if (std::abs(norm - 1.0) > 1e-3 && warn)
                warn("direction " + std::to_string(i) + " has norm " + std::to_string(norm) +
                     "; renormalized");
            g /= norm;
        } else if (norm > 0.0) {
            g /= norm;
        }
        s.directions.push_back(g);
        s.bvalues.push_back(b);
    }
    s.validate();
    return s;
}

inline void write_bvec_bval(const GradientScheme& scheme, const std::filesystem::path& bvec_path,
                            const std::filesystem::path& bval_path) {
    const auto write_row = [](std::ostream& os, const auto& get, std::size_t m) {
        for (std::size_t i = 0; i < m; ++i) {
            if (i) os << ' ';
            os << std::setprecision(17) << get(i);
        }
        os << '\n';
    };
    const std::size_t m = scheme.size();
    std::ofstream bval(bval_path);
    std::ofstream bvec(bvec_path);
    if (!bval || !bvec) throw DataError("cannot write " + bvec_path.string());
    write_row(bval, [&](std::size_t i) { return scheme.bvalues[i]; }, m);
    for (int c = 0; c < 3; ++c)
        write_row(bvec, [&](std::size_t i) { return scheme.directions[i][c]; }, m);
}

}  // namespace dticalib::io
