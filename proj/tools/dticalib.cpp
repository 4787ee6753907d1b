// Command-line front end: one subcommand per pipeline stage.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using dticalib::DataError;
using dticalib::UsageError;
using nlohmann::json;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> iterations;
    std::optional<int> samples;
    std::optional<std::string> snr_db;
    std::optional<std::string> source;
};

// Overrides are folded into the raw JSON so the manifest's config hash
// reflects them.
void apply(json& j, const Overrides& o) {
    if (o.seed) j["seed"] = *o.seed;
    if (o.out) j["output_dir"] = fs::absolute(*o.out).string();
    if (o.iterations) j["bootstrap"]["iterations"] = *o.iterations;
    if (o.samples) j["dropout"]["samples"] = *o.samples;
    if (o.source) j["calibration"]["source"] = *o.source;
    if (o.snr_db) {
        if (!j.contains("phantom")) throw UsageError("config error: --snr-db needs a phantom section");
        if (*o.snr_db == "inf") {
            j["phantom"]["snr_db"] = "inf";
        } else {
            try {
                std::size_t used = 0;
                const double v = std::stod(*o.snr_db, &used);
                if (used != o.snr_db->size()) throw std::invalid_argument("trailing");
                j["phantom"]["snr_db"] = v;
            } catch (const std::exception&) {
                throw UsageError("usage error: --snr-db expects a number or inf");
            }
        }
        j["phantom"].erase("snr_db_max");
    }
}

dticalib::io::ExperimentConfig load(const Overrides& o) {
    const fs::path path = fs::absolute(o.config);
    json j = dticalib::io::load_config_json(path);
    if (!j.is_object()) throw UsageError("config error: top level must be an object");
    apply(j, o);
    return dticalib::io::parse_config(j, path.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dticalib: diffusion tensor fitting with calibrated uncertainties"};
    app.require_subcommand(1);
    app.set_version_flag("--version", dticalib::cli::kVersion);

    Overrides o;
    using Handler = void (*)(const dticalib::io::ExperimentConfig&);
    const std::pair<const char*, Handler> commands[] = {
        {"simulate", dticalib::cli::cmd_simulate},   {"fit", dticalib::cli::cmd_fit},
        {"bootstrap", dticalib::cli::cmd_bootstrap}, {"train", dticalib::cli::cmd_train},
        {"predict", dticalib::cli::cmd_predict},     {"calibrate", dticalib::cli::cmd_calibrate},
        {"evaluate", dticalib::cli::cmd_evaluate},   {"curves", dticalib::cli::cmd_curves},
    };
    const char* help[] = {
        "generate a synthetic phantom dataset",
        "fit tensors (fit.method: ols, wlls, cwlls)",
        "CWLLS fit plus wild-bootstrap uncertainty",
        "train the two-branch network",
        "MC-dropout prediction with aleatoric u",
        "fit isotonic recalibration maps on the calibration split",
        "errors, ENCE and AUCC before/after recalibration",
        "PICP vs normalized MPIW curves as CSV",
    };
    Handler chosen = nullptr;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].first, help[i]);
        sub->add_option("--config", o.config, "experiment config (JSON)")->required();
        sub->add_option("--seed", o.seed, "override the top-level seed");
        sub->add_option("--out", o.out, "override the output directory");
        sub->add_option("--iterations", o.iterations, "bootstrap iterations");
        sub->add_option("--samples", o.samples, "MC-dropout samples");
        sub->add_option("--snr-db", o.snr_db, "phantom SNR in dB (or inf)");
        sub->add_option("--source", o.source, "uncertainty source: fit, wbs or dl");
        sub->callback([&chosen, h = commands[i].second] { chosen = h; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        chosen(load(o));
    } catch (const UsageError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
