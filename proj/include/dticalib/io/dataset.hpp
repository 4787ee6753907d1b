#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dticalib/error.hpp"
#include "dticalib/io/block_file.hpp"
#include "dticalib/io/bvec_bval.hpp"
#include "dticalib/simulation.hpp"

namespace dticalib::io {

inline constexpr int kDatasetVersion = 1;

/// Voxel measurements plus the acquisition they were taken with.
struct Dataset {
    GradientScheme scheme;
    std::vector<VoxelRecord> voxels;
    std::uint64_t seed = 0;

    [[nodiscard]] bool has_ground_truth() const {
        return !voxels.empty() && std::all_of(voxels.begin(), voxels.end(),
                                              [](const VoxelRecord& v) { return v.truth.has_value(); });
    }
};

/// Writes `path` plus `<stem>.bvec` / `<stem>.bval` next to it; the header's
/// scheme_ref names the shared stem.
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    const std::size_t n = ds.voxels.size();
    const std::size_t m = ds.scheme.size();
    const bool gt = ds.has_ground_truth();
    BlockFile f;
    f.header = {{"format", "dticalib-dataset"},
                {"version", kDatasetVersion},
                {"n_voxels", n},
                {"m", m},
                {"has_ground_truth", gt},
                {"seed", ds.seed},
                {"scheme_ref", path.stem().string()}};
    Block signals{"signals", n, m, {}};
    Block truth{"ground_truth", n, 6, {}};
    Block s0{"s0", n, 1, {}};
    Block snr{"snr_db", n, 1, {}};
    Block pop{"population", n, 1, {}};
    for (const auto& v : ds.voxels) {
        if (v.signals.size() != m) throw DataError("voxel signal count does not match scheme");
        signals.data.insert(signals.data.end(), v.signals.begin(), v.signals.end());
        if (gt) truth.data.insert(truth.data.end(), v.truth->elements.begin(), v.truth->elements.end());
        s0.data.push_back(v.s0);
        snr.data.push_back(std::isinf(v.snr_db) ? -1.0 : v.snr_db);
        pop.data.push_back(v.population);
    }
    f.blocks.push_back(std::move(signals));
    if (gt) f.blocks.push_back(std::move(truth));
    f.blocks.push_back(std::move(s0));
    f.blocks.push_back(std::move(snr));
    f.blocks.push_back(std::move(pop));
    write_block_file(path, f);
    const auto dir = path.parent_path();
    write_bvec_bval(ds.scheme, dir / (path.stem().string() + ".bvec"),
                    dir / (path.stem().string() + ".bval"));
}

inline Dataset read_dataset(const std::filesystem::path& path, const WarningSink& warn = {}) {
    const BlockFile f = read_block_file(path);
    if (f.header.value("format", "") != "dticalib-dataset")
        throw DataError(path.string() + " is not a dataset file");
    if (f.header.value("version", -1) != kDatasetVersion)
        throw DataError(path.string() + ": unsupported dataset version");
    const auto n = f.header.at("n_voxels").get<std::size_t>();
    const auto m = f.header.at("m").get<std::size_t>();
    const bool gt = f.header.at("has_ground_truth").get<bool>();
    const auto stem = f.header.at("scheme_ref").get<std::string>();

    Dataset ds;
    ds.seed = f.header.value("seed", std::uint64_t{0});
    const auto dir = path.parent_path();
    ds.scheme = read_bvec_bval(dir / (stem + ".bvec"), dir / (stem + ".bval"), warn);
    if (ds.scheme.size() != m) throw DataError(path.string() + ": scheme size does not match header m");

    const auto expect = [&](const std::string& name, std::size_t cols) -> const Block& {
        const Block& b = f.at(name);
        if (b.rows != n || b.cols != cols)
            throw DataError(path.string() + ": block '" + name + "' has shape " +
                            std::to_string(b.rows) + "x" + std::to_string(b.cols));
        return b;
    };
    const Block& signals = expect("signals", m);
    const Block* truth = gt ? &expect("ground_truth", 6) : nullptr;
    const Block* s0 = f.find("s0") ? &expect("s0", 1) : nullptr;
    const Block* snr = f.find("snr_db") ? &expect("snr_db", 1) : nullptr;
    const Block* pop = f.find("population") ? &expect("population", 1) : nullptr;
    ds.voxels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& v = ds.voxels[i];
        v.signals.assign(signals.data.begin() + static_cast<std::ptrdiff_t>(i * m),
                         signals.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
        if (truth) {
            DiffusionTensor t;
            for (std::size_t j = 0; j < 6; ++j) t.elements[j] = truth->data[i * 6 + j];
            v.truth = t;
        }
        if (s0) v.s0 = s0->data[i];
        if (snr) v.snr_db = snr->data[i] < 0.0 ? kNoiselessSnr : snr->data[i];
        if (pop) v.population = static_cast<int>(pop->data[i]);
    }
    return ds;
}

/// Per-voxel tensor estimates with optional uncertainty maps.
struct Estimates {
    std::string method;
    std::vector<DiffusionTensor> tensors;
    std::vector<UncertaintyBundle> uncertainty;  // empty or one per voxel
    bool has_aleatoric = false;
};

inline void write_estimates(const std::filesystem::path& path, const Estimates& e) {
    const std::size_t n = e.tensors.size();
    BlockFile f;
    f.header = {{"format", "dticalib-estimates"},
                {"version", kDatasetVersion},
                {"method", e.method},
                {"n_voxels", n},
                {"has_uncertainty", !e.uncertainty.empty()}};
    Block tensors{"tensors", n, 7, {}};
    Block fa{"fa", n, 1, {}};
    Block md{"md", n, 1, {}};
    Block dir{"principal_direction", n, 3, {}};
    for (const auto& t : e.tensors) {
        tensors.data.insert(tensors.data.end(), t.elements.begin(), t.elements.end());
        tensors.data.push_back(t.ln_s0);
        const auto s = eig3_sym(t);
        fa.data.push_back(s.fa);
        md.data.push_back(s.md);
        for (int c = 0; c < 3; ++c) dir.data.push_back(s.principal_direction()[c]);
    }
    f.blocks = {std::move(tensors), std::move(fa), std::move(md), std::move(dir)};
    if (!e.uncertainty.empty()) {
        if (e.uncertainty.size() != n) throw DataError("uncertainty count does not match tensors");
        Block theta{"theta95", n, 1, {}};
        Block sfa{"sigma_fa", n, 1, {}};
        Block smd{"sigma_md", n, 1, {}};
        Block u{"aleatoric_u", n, 1, {}};
        for (const auto& b : e.uncertainty) {
            theta.data.push_back(b.theta95);
            sfa.data.push_back(b.sigma_fa);
            smd.data.push_back(b.sigma_md);
            u.data.push_back(b.aleatoric_u.value_or(0.0));
        }
        f.blocks.push_back(std::move(theta));
        f.blocks.push_back(std::move(sfa));
        f.blocks.push_back(std::move(smd));
        if (e.has_aleatoric) f.blocks.push_back(std::move(u));
    }
    write_block_file(path, f);
}

inline Estimates read_estimates(const std::filesystem::path& path) {
    const BlockFile f = read_block_file(path);
    if (f.header.value("format", "") != "dticalib-estimates")
        throw DataError(path.string() + " is not an estimates file");
    if (f.header.value("version", -1) != kDatasetVersion)
        throw DataError(path.string() + ": unsupported estimates version");
    Estimates e;
    e.method = f.header.value("method", "");
    const Block& t = f.at("tensors");
    if (t.cols != 7) throw DataError(path.string() + ": tensors block must have 7 columns");
    for (std::size_t i = 0; i < t.rows; ++i) {
        DiffusionTensor d;
        for (std::size_t j = 0; j < 6; ++j) d.elements[j] = t.data[i * 7 + j];
        d.ln_s0 = t.data[i * 7 + 6];
        e.tensors.push_back(d);
    }
    if (f.header.value("has_uncertainty", false)) {
        const Block& theta = f.at("theta95");
        const Block& sfa = f.at("sigma_fa");
        const Block& smd = f.at("sigma_md");
        const Block* u = f.find("aleatoric_u");
        e.has_aleatoric = u != nullptr;
        for (std::size_t i = 0; i < t.rows; ++i) {
            UncertaintyBundle b{theta.data.at(i), sfa.data.at(i), smd.data.at(i), std::nullopt};
            if (u) b.aleatoric_u = u->data.at(i);
            e.uncertainty.push_back(b);
        }
    }
    return e;
}

}  // namespace dticalib::io
