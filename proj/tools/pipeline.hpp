#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dticalib/bootstrap.hpp"
#include "dticalib/calibration.hpp"
#include "dticalib/dl_model.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/io/calibration_io.hpp"
#include "dticalib/io/checkpoint.hpp"
#include "dticalib/io/config.hpp"
#include "dticalib/io/dataset.hpp"
#include "dticalib/io/hash.hpp"
#include "dticalib/parallel.hpp"
#include "dticalib/simulation.hpp"

namespace dticalib::cli {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;
using nlohmann::json;

/// Records every file a command writes, then emits manifest_<command>.json.
class Manifest {
public:
    Manifest(std::string command, const io::ExperimentConfig& cfg)
        : command_(std::move(command)), cfg_(cfg) {}

    void add(const fs::path& path) { outputs_.push_back(path); }

    void write() const {
        json outputs = json::object();
        for (const auto& p : outputs_)
            outputs[fs::relative(p, cfg_.output_dir).generic_string()] = io::sha256_file(p);
        const json m = {{"command", command_},
                        {"version", kVersion},
                        {"config_hash", io::sha256_hex(cfg_.raw.dump())},
                        {"seed", cfg_.seed},
                        {"train_seed", cfg_.train.seed},
                        {"outputs", outputs}};
        write_json(cfg_.output_dir / ("manifest_" + command_ + ".json"), m);
    }

    static void write_json(const fs::path& path, const json& j) {
        fs::create_directories(path.parent_path());
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw DataError("cannot write " + path.string());
        os << j.dump(2) << '\n';
    }

private:
    std::string command_;
    const io::ExperimentConfig& cfg_;
    std::vector<fs::path> outputs_;
};

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw DataError("non-finite result: " + what);
}

inline io::Dataset load_input(const fs::path& path) {
    if (!fs::exists(path))
        throw DataError("missing input: " + path.string() + " (run `simulate` or set \"dataset\")");
    return io::read_dataset(path, [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
}

inline fs::path estimates_path(const io::ExperimentConfig& cfg, const std::string& source) {
    if (source == "fit") return cfg.output_dir / ("fit_" + std::string(to_string(cfg.fit_method)) + ".dcest");
    return cfg.output_dir / (source + ".dcest");
}

inline void cmd_simulate(const io::ExperimentConfig& cfg) {
    if (!cfg.phantom) throw UsageError("config error: simulate needs a \"phantom\" section");
    io::Dataset ds;
    ds.scheme = cfg.phantom->scheme;
    ds.seed = cfg.phantom->seed;
    ds.voxels = make_phantom(*cfg.phantom);
    const fs::path out = cfg.output_dir / "phantom.dcds";
    io::write_dataset(out, ds);
    Manifest m("simulate", cfg);
    m.add(out);
    m.add(cfg.output_dir / "phantom.bvec");
    m.add(cfg.output_dir / "phantom.bval");
    m.write();
}

inline void cmd_fit(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.input_dataset());
    const Eigen::MatrixXd design = design_matrix(ds.scheme);
    io::Estimates est;
    est.method = std::string(to_string(cfg.fit_method));
    est.tensors.resize(ds.voxels.size());
    parallel_for(ds.voxels.size(), [&](std::size_t i) {
        try {
            est.tensors[i] = fit(cfg.fit_method, ds.voxels[i].signals, design).tensor;
        } catch (const DataError& e) {
            throw DataError("voxel " + std::to_string(i) + ": " + e.what());
        }
    });
    const fs::path out = estimates_path(cfg, "fit");
    io::write_estimates(out, est);
    Manifest m("fit", cfg);
    m.add(out);
    m.write();
}

inline void cmd_bootstrap(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.input_dataset());
    const Eigen::MatrixXd design = design_matrix(ds.scheme);
    io::Estimates est;
    est.method = "cwlls+wbs";
    est.tensors.resize(ds.voxels.size());
    est.uncertainty.resize(ds.voxels.size());
    parallel_for(ds.voxels.size(), [&](std::size_t i) {
        try {
            const auto& s = ds.voxels[i].signals;
            est.tensors[i] = fit_cwlls(s, design).tensor;
            const auto reps = wild_bootstrap(s, design, cfg.bootstrap_iterations, cfg.seed, i);
            est.uncertainty[i] = summarize_uncertainty(reps);
        } catch (const DataError& e) {
            throw DataError("voxel " + std::to_string(i) + ": " + e.what());
        }
    });
    const fs::path out = estimates_path(cfg, "wbs");
    io::write_estimates(out, est);
    Manifest m("bootstrap", cfg);
    m.add(out);
    m.write();
}

inline std::vector<TrainingExample> training_examples(const io::Dataset& ds) {
    if (!ds.has_ground_truth()) throw DataError("training dataset has no ground-truth tensors");
    std::vector<TrainingExample> out;
    out.reserve(ds.voxels.size());
    for (const auto& v : ds.voxels) out.push_back({v.signals, *v.truth});
    return out;
}

inline void cmd_train(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.training_dataset());
    const auto examples = training_examples(ds);
    TrainReport report;
    const DlModel model = train(examples, ds.scheme, cfg.model, cfg.train, &report);
    const fs::path ckpt = cfg.output_dir / "model.dcmodel";
    io::write_checkpoint(ckpt, model);
    const fs::path log = cfg.output_dir / "train_log.json";
    Manifest::write_json(log, {{"train_loss", report.train_loss},
                               {"validation_loss", report.validation_loss},
                               {"epochs_run", report.epochs_run},
                               {"early_stopped", report.early_stopped}});
    Manifest m("train", cfg);
    m.add(ckpt);
    m.add(log);
    m.write();
}

inline void cmd_predict(const io::ExperimentConfig& cfg) {
    const fs::path ckpt = cfg.output_dir / "model.dcmodel";
    if (!fs::exists(ckpt)) throw DataError("missing input: " + ckpt.string() + " (run `train` first)");
    const DlModel model = io::read_checkpoint(ckpt);
    const auto ds = load_input(cfg.input_dataset());
    if (ds.scheme.size() != model.scheme.size())
        throw DataError("dataset has " + std::to_string(ds.scheme.size()) +
                        " measurements but the model expects " + std::to_string(model.scheme.size()));
    io::Estimates est;
    est.method = "dl+mc_dropout";
    est.has_aleatoric = true;
    est.tensors.resize(ds.voxels.size());
    est.uncertainty.resize(ds.voxels.size());
    parallel_for(ds.voxels.size(), [&](std::size_t i) {
        const auto p = predict_mc_dropout(model, ds.voxels[i].signals, cfg.dropout_samples, cfg.seed, i);
        est.tensors[i] = p.mean_tensor;
        est.uncertainty[i] = cfg.dropout_samples >= 2 ? summarize_uncertainty(p.samples) : UncertaintyBundle{};
        est.uncertainty[i].aleatoric_u = p.aleatoric_u;
        require_finite(p.aleatoric_u, "aleatoric u at voxel " + std::to_string(i));
    });
    const fs::path out = estimates_path(cfg, "dl");
    io::write_estimates(out, est);
    Manifest m("predict", cfg);
    m.add(out);
    m.write();
}

/// Per-parameter triples (fa, md, theta) for every voxel.
struct ParameterTriples {
    std::vector<PredictionTriple> fa;
    std::vector<PredictionTriple> md;
    std::vector<PredictionTriple> theta;
};

/// Theta uses the folded angular error as the estimate (truth 0) and
/// theta95 / 1.96 as its sigma.
inline ParameterTriples build_triples(const io::Dataset& ds, const io::Estimates& est,
                                      std::span<const std::size_t> idx) {
    if (!ds.has_ground_truth()) throw DataError("evaluation needs ground-truth tensors");
    if (est.tensors.size() != ds.voxels.size())
        throw DataError("estimates cover " + std::to_string(est.tensors.size()) + " voxels, dataset has " +
                        std::to_string(ds.voxels.size()));
    const bool have_sigma = !est.uncertainty.empty();
    ParameterTriples t;
    for (std::size_t i : idx) {
        const auto truth = eig3_sym(*ds.voxels[i].truth);
        const auto fit = eig3_sym(est.tensors[i]);
        const UncertaintyBundle u = have_sigma ? est.uncertainty[i] : UncertaintyBundle{};
        t.fa.push_back({truth.fa, fit.fa, u.sigma_fa});
        t.md.push_back({truth.md, fit.md, u.sigma_md});
        const double angle = axis_angle_deg(truth.principal_direction(), fit.principal_direction());
        t.theta.push_back({0.0, angle, u.theta95 / 1.96});
    }
    return t;
}

struct Split {
    std::vector<std::size_t> calibration;
    std::vector<std::size_t> test;
};

/// Seeded shuffle; the leading `fraction` of shuffled positions form the
/// calibration set. Both lists are returned sorted.
inline Split split_voxels(std::size_t n, double fraction, std::uint64_t seed) {
    Stream rng(stream_key(seed, 0xCA11B));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_cal = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    Split s;
    s.calibration.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_cal));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_cal), order.end());
    std::sort(s.calibration.begin(), s.calibration.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

inline const std::vector<PredictionTriple>& pick(const ParameterTriples& t, const std::string& p) {
    if (p == "fa") return t.fa;
    if (p == "md") return t.md;
    return t.theta;
}

inline double cap_for(const io::MpiwCaps& caps, const std::string& p) {
    if (p == "fa") return caps.fa;
    if (p == "md") return caps.md;
    return caps.theta;
}

inline const std::vector<std::string>& parameters() {
    static const std::vector<std::string> names{"fa", "md", "theta"};
    return names;
}

inline io::Estimates load_estimates(const io::ExperimentConfig& cfg) {
    const fs::path p = estimates_path(cfg, cfg.calibration.source);
    if (!fs::exists(p)) throw DataError("missing input: " + p.string());
    return io::read_estimates(p);
}

inline void cmd_calibrate(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.input_dataset());
    const auto est = load_estimates(cfg);
    if (est.uncertainty.empty()) throw DataError("source '" + cfg.calibration.source + "' has no uncertainty maps");
    const Split split = split_voxels(ds.voxels.size(), cfg.calibration.split, cfg.seed);
    const auto triples = build_triples(ds, est, split.calibration);
    json maps = json::object();
    for (const auto& p : parameters()) {
        const auto stats = bin_rmv_rmse(pick(triples, p), cfg.calibration.bins);
        maps[p] = io::isotonic_json(fit_isotonic(stats));
    }
    const fs::path out = cfg.output_dir / "calibration.json";
    Manifest::write_json(out, {{"source", cfg.calibration.source},
                               {"split", cfg.calibration.split},
                               {"seed", cfg.seed},
                               {"calibration_indices", split.calibration},
                               {"test_indices", split.test},
                               {"maps", maps}});
    Manifest m("calibrate", cfg);
    m.add(out);
    m.write();
}

struct LoadedCalibration {
    std::vector<std::size_t> test;
    std::map<std::string, IsotonicMap> maps;
};

inline std::optional<LoadedCalibration> load_calibration(const io::ExperimentConfig& cfg) {
    const fs::path p = cfg.output_dir / "calibration.json";
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream is(p);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw DataError("malformed " + p.string() + ": " + e.what());
    }
    if (j.value("source", "") != cfg.calibration.source) return std::nullopt;
    LoadedCalibration c;
    c.test = j.at("test_indices").get<std::vector<std::size_t>>();
    for (const auto& par : parameters()) c.maps[par] = io::isotonic_from_json(j.at("maps").at(par));
    return c;
}

inline json metrics_or_error(std::span<const PredictionTriple> triples, double cap, const io::CalibrationSettings& s) {
    try {
        auto m = evaluate_calibration(triples, cap, s.bins, s.grid_size);
        require_finite(m.ence, "ence");
        require_finite(m.aucc, "aucc");
        return io::metrics_json(m);
    } catch (const DataError& e) {
        return {{"error", e.what()}};
    }
}

inline double median_abs_error(std::span<const PredictionTriple> t) {
    std::vector<double> e;
    e.reserve(t.size());
    for (const auto& x : t) e.push_back(std::abs(x.error()));
    return percentile(std::move(e), 50.0);
}

inline void cmd_evaluate(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.input_dataset());
    const auto est = load_estimates(cfg);
    const auto cal = load_calibration(cfg);
    const auto idx = cal ? cal->test : all_indices(ds.voxels.size());
    const auto triples = build_triples(ds, est, idx);

    json errors = json::object();
    json calib = json::object();
    for (const auto& p : parameters()) {
        const auto& t = pick(triples, p);
        const double med = median_abs_error(t);
        require_finite(med, p + " median error");
        errors[p] = {{"median_abs", med}, {"n", t.size()}};
        if (est.uncertainty.empty()) continue;
        json entry = {{"before", metrics_or_error(t, cap_for(cfg.calibration.caps, p), cfg.calibration)}};
        if (cal) {
            const auto recal = recalibrate(cal->maps.at(p), t);
            entry["after"] = metrics_or_error(recal, cap_for(cfg.calibration.caps, p), cfg.calibration);
        }
        calib[p] = entry;
    }
    json out = {{"source", cfg.calibration.source},
                {"method", est.method},
                {"evaluated_on", cal ? "held_out" : "all"},
                {"errors", errors}};
    if (!est.uncertainty.empty()) out["calibration"] = calib;
    if (est.has_aleatoric) {
        double mean_u = 0.0;
        for (std::size_t i : idx) mean_u += est.uncertainty[i].aleatoric_u.value_or(0.0);
        out["mean_aleatoric_u"] = idx.empty() ? 0.0 : mean_u / static_cast<double>(idx.size());
    }
    const fs::path path = cfg.output_dir / "metrics.json";
    Manifest::write_json(path, out);
    Manifest m("evaluate", cfg);
    m.add(path);
    m.write();
}

inline void cmd_curves(const io::ExperimentConfig& cfg) {
    const auto ds = load_input(cfg.input_dataset());
    const auto est = load_estimates(cfg);
    if (est.uncertainty.empty()) throw DataError("source '" + cfg.calibration.source + "' has no uncertainty maps");
    const auto cal = load_calibration(cfg);
    const auto idx = cal ? cal->test : all_indices(ds.voxels.size());
    const auto triples = build_triples(ds, est, idx);
    Manifest m("curves", cfg);
    const auto emit = [&](const fs::path& path, std::span<const PredictionTriple> t, double cap) {
        const auto curve = picp_mpiw_curve(t, cap, cfg.calibration.grid_size);
        fs::create_directories(path.parent_path());
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw DataError("cannot write " + path.string());
        io::write_curve_csv(os, curve);
        os.close();
        m.add(path);
    };
    for (const auto& p : parameters()) {
        const double cap = cap_for(cfg.calibration.caps, p);
        emit(cfg.output_dir / ("curves_" + p + ".csv"), pick(triples, p), cap);
        if (cal) emit(cfg.output_dir / ("curves_" + p + "_calibrated.csv"), recalibrate(cal->maps.at(p), pick(triples, p)), cap);
    }
    m.write();
}

}  // namespace dticalib::cli
