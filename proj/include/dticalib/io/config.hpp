#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dticalib/calibration.hpp"
#include "dticalib/dl_model.hpp"
#include "dticalib/error.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/io/bvec_bval.hpp"
#include "dticalib/simulation.hpp"

namespace dticalib::io {

/// Interval-width caps used to set beta_max per parameter.
struct MpiwCaps {
    double fa = 0.20;
    double md = 0.2e-3;   // mm^2/s
    double theta = 60.0;  // degrees
};

struct CalibrationSettings {
    std::string source = "wbs";  // fit | wbs | dl
    double split = 0.5;
    int bins = kDefaultBins;
    int grid_size = kDefaultGridSize;
    MpiwCaps caps;
};

/// Declarative experiment description, read from a JSON file. Relative
/// paths resolve against the config file's directory.
struct ExperimentConfig {
    nlohmann::json raw;
    std::filesystem::path base_dir;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;

    std::optional<PhantomSpec> phantom;
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> train_dataset;

    FitMethod fit_method = FitMethod::cwlls;
    int bootstrap_iterations = kDefaultBootstrapIterations;
    int dropout_samples = kDefaultDropoutSamples;
    MlpSpec model;
    TrainConfig train;
    CalibrationSettings calibration;

    /// Dataset consumed by fit/bootstrap/predict/calibrate/evaluate.
    [[nodiscard]] std::filesystem::path input_dataset() const {
        return dataset ? *dataset : output_dir / "phantom.dcds";
    }
    [[nodiscard]] std::filesystem::path training_dataset() const {
        return train_dataset ? *train_dataset : input_dataset();
    }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {}

    template <typename T>
    T get(const char* key, const T& fallback) const {
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw UsageError("config error: " + where_ + "." + key + " has the wrong type");
        }
    }

    template <typename T>
    T require(const char* key) const {
        if (!j_.contains(key)) throw UsageError("config error: missing " + where_ + "." + key);
        return get<T>(key, T{});
    }

    [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }

    [[nodiscard]] ConfigReader child(const char* key) const {
        static const nlohmann::json empty = nlohmann::json::object();
        if (!j_.contains(key)) return ConfigReader(empty, where_ + "." + key);
        if (!j_.at(key).is_object())
            throw UsageError("config error: " + where_ + "." + key + " must be an object");
        return ConfigReader(j_.at(key), where_ + "." + key);
    }

    [[nodiscard]] const nlohmann::json& json() const { return j_; }
    [[nodiscard]] const std::string& where() const { return where_; }

private:
    const nlohmann::json& j_;
    std::string where_;
};

inline double parse_snr(const nlohmann::json& j, const std::string& where) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "infinity" || s == "noiseless") return kNoiselessSnr;
        throw UsageError("config error: " + where + " must be a number or \"inf\"");
    }
    if (!j.is_number()) throw UsageError("config error: " + where + " must be a number or \"inf\"");
    return j.get<double>();
}

inline Vec3 parse_vec3(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw UsageError("config error: " + where + " must be a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline GradientScheme parse_scheme(const ConfigReader& r, const std::filesystem::path& base) {
    if (r.has("bvec") || r.has("bval")) {
        const auto bvec = resolve(base, r.require<std::string>("bvec"));
        const auto bval = resolve(base, r.require<std::string>("bval"));
        if (!std::filesystem::exists(bvec) || !std::filesystem::exists(bval))
            throw UsageError("config error: scheme files not found: " + bvec.string() + ", " + bval.string());
        return read_bvec_bval(bvec, bval);
    }
    const int n = r.get<int>("n_directions", 30);
    const double b = r.get<double>("bvalue", 1000.0);
    const int n_b0 = r.get<int>("n_b0", 5);
    if (n < 1 || n_b0 < 0 || !(b > 0.0)) throw UsageError("config error: invalid generated scheme");
    return hemisphere_scheme(n, b, n_b0);
}

inline TensorGenerator parse_generator(const ConfigReader& r) {
    const auto type = r.get<std::string>("type", "prolate");
    if (type == "prolate") return phantom::Prolate{r.get("fa", 0.8), r.get("md", 0.9e-3)};
    if (type == "oblate") return phantom::Oblate{r.get("fa", 0.5), r.get("md", 0.9e-3)};
    if (type == "random_spd") return phantom::RandomSpd{r.get("eig_min", 0.1e-3), r.get("eig_max", 3.0e-3)};
    if (type == "two_population") {
        phantom::TwoPopulation g;
        g.eig_min = r.get("eig_min", g.eig_min);
        g.eig_max = r.get("eig_max", g.eig_max);
        g.shift = r.get("shift", g.shift);
        g.shifted_fraction = r.get("shifted_fraction", g.shifted_fraction);
        return g;
    }
    if (type == "fixed") {
        const auto e = r.require<std::vector<double>>("tensor");
        if (e.size() != 6) throw UsageError("config error: fixed tensor needs 6 elements");
        DiffusionTensor t;
        std::copy(e.begin(), e.end(), t.elements.begin());
        return phantom::Fixed{t};
    }
    throw UsageError("config error: unknown phantom generator '" + type + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw UsageError("config error: top level must be an object");
    ExperimentConfig c;
    c.raw = j;
    c.base_dir = base_dir;
    const detail::ConfigReader root(j, "config");
    if (!root.has("seed")) throw UsageError("config error: missing config.seed");
    c.seed = root.require<std::uint64_t>("seed");
    c.output_dir = detail::resolve(base_dir, root.get<std::string>("output_dir", "out"));

    if (root.has("phantom")) {
        const auto p = root.child("phantom");
        PhantomSpec spec;
        spec.n_voxels = p.get<std::size_t>("n_voxels", 100);
        spec.generator = detail::parse_generator(p.child("generator"));
        const auto orientation = p.get<std::string>("orientation", "uniform");
        if (orientation == "uniform") {
            spec.orientation = Orientation::uniform;
        } else if (orientation == "fixed_axis") {
            spec.orientation = Orientation::fixed_axis;
            if (p.has("axis")) spec.axis = detail::parse_vec3(p.json().at("axis"), p.where() + ".axis");
        } else {
            throw UsageError("config error: orientation must be uniform or fixed_axis");
        }
        spec.scheme = detail::parse_scheme(p.child("scheme"), base_dir);
        if (p.has("snr_db")) spec.snr_db = detail::parse_snr(p.json().at("snr_db"), p.where() + ".snr_db");
        if (p.has("snr_db_max"))
            spec.snr_db_max = detail::parse_snr(p.json().at("snr_db_max"), p.where() + ".snr_db_max");
        spec.seed = p.get<std::uint64_t>("seed", c.seed);
        c.phantom = spec;
    }
    if (root.has("dataset")) {
        c.dataset = detail::resolve(base_dir, root.require<std::string>("dataset"));
        if (!std::filesystem::exists(*c.dataset))
            throw UsageError("config error: dataset not found: " + c.dataset->string());
    }

    c.fit_method = parse_fit_method(root.child("fit").get<std::string>("method", "cwlls"));
    c.bootstrap_iterations = root.child("bootstrap").get("iterations", kDefaultBootstrapIterations);
    c.dropout_samples = root.child("dropout").get("samples", kDefaultDropoutSamples);

    const auto m = root.child("model");
    c.model.hidden_main = m.get("hidden_main", c.model.hidden_main);
    c.model.hidden_uncertainty = m.get("hidden_uncertainty", c.model.hidden_uncertainty);
    c.model.dropout_rate = m.get("dropout_rate", c.model.dropout_rate);

    const auto t = root.child("train");
    c.train.lambda = t.get("lambda", c.train.lambda);
    c.train.learning_rate = t.get("learning_rate", c.train.learning_rate);
    c.train.batch_size = t.get("batch_size", c.train.batch_size);
    c.train.epochs = t.get("epochs", c.train.epochs);
    c.train.eval_interval = t.get("eval_interval", c.train.eval_interval);
    c.train.early_stop_patience = t.get("early_stop_patience", c.train.early_stop_patience);
    c.train.validation_fraction = t.get("validation_fraction", c.train.validation_fraction);
    c.train.seed = t.get<std::uint64_t>("seed", c.seed);
    if (t.has("dataset")) {
        c.train_dataset = detail::resolve(base_dir, t.require<std::string>("dataset"));
        if (!std::filesystem::exists(*c.train_dataset))
            throw UsageError("config error: training dataset not found: " + c.train_dataset->string());
    }

    const auto cal = root.child("calibration");
    c.calibration.source = cal.get<std::string>("source", c.calibration.source);
    c.calibration.split = cal.get("split", c.calibration.split);
    c.calibration.bins = cal.get("bins", c.calibration.bins);
    c.calibration.grid_size = cal.get("grid_size", c.calibration.grid_size);
    const auto caps = cal.child("mpiw_cap");
    c.calibration.caps.fa = caps.get("fa", c.calibration.caps.fa);
    c.calibration.caps.md = caps.get("md", c.calibration.caps.md);
    c.calibration.caps.theta = caps.get("theta", c.calibration.caps.theta);

    if (c.bootstrap_iterations < 2) throw UsageError("config error: bootstrap.iterations must be >= 2");
    if (c.dropout_samples < 1) throw UsageError("config error: dropout.samples must be >= 1");
    if (!(c.calibration.split > 0.0 && c.calibration.split < 1.0))
        throw UsageError("config error: calibration.split must be in (0, 1)");
    const auto& src = c.calibration.source;
    if (src != "fit" && src != "wbs" && src != "dl")
        throw UsageError("config error: calibration.source must be fit, wbs or dl");
    return c;
}

inline nlohmann::json load_config_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("config error: cannot open " + path.string());
    try {
        return nlohmann::json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config error: malformed " + path.string() + ": " + e.what());
    }
}

}  // namespace dticalib::io
