#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dticalib/dl_model.hpp"
#include "dticalib/error.hpp"
#include "dticalib/io/block_file.hpp"

namespace dticalib::io {

inline constexpr int kCheckpointVersion = 1;

/// JSON header (spec, config, epochs, seed, scheme) followed by one float64
/// block per weight matrix and bias vector, in declaration order: main
/// branch layers, then uncertainty branch layers.
inline void write_checkpoint(const std::filesystem::path& path, const DlModel& model) {
    const auto& net = model.network;
    const auto& spec = net.spec();
    nlohmann::json scheme = {{"bvalues", model.scheme.bvalues}, {"directions", nlohmann::json::array()}};
    for (const auto& d : model.scheme.directions) scheme["directions"].push_back({d.x(), d.y(), d.z()});
    BlockFile f;
    f.header = {{"format", "dticalib-model"},
                {"version", kCheckpointVersion},
                {"spec",
                 {{"input_dim", spec.input_dim},
                  {"hidden_main", spec.hidden_main},
                  {"hidden_uncertainty", spec.hidden_uncertainty},
                  {"dropout_rate", spec.dropout_rate},
                  {"output_unit", spec.output_unit},
                  {"u_min", spec.u_min},
                  {"u_max", spec.u_max}}},
                {"config",
                 {{"lambda", model.config.lambda},
                  {"learning_rate", model.config.learning_rate},
                  {"batch_size", model.config.batch_size},
                  {"epochs", model.config.epochs},
                  {"eval_interval", model.config.eval_interval},
                  {"early_stop_patience", model.config.early_stop_patience},
                  {"validation_fraction", model.config.validation_fraction}}},
                {"epoch", model.epochs_run},
                {"seed", model.config.seed},
                {"scheme", scheme}};
    const auto params = net.parameters();
    const auto add_layers = [&](const std::vector<TwoBranchMlp::Dense>& layers, const std::string& prefix) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& d = layers[l];
            Block w{prefix + std::to_string(l) + ".weight", static_cast<std::size_t>(d.out),
                    static_cast<std::size_t>(d.in), {}};
            // Stored row-major (out x in).
            for (int r = 0; r < d.out; ++r)
                for (int c = 0; c < d.in; ++c)
                    w.data.push_back(params[d.weight_offset + static_cast<std::size_t>(c * d.out + r)]);
            Block b{prefix + std::to_string(l) + ".bias", static_cast<std::size_t>(d.out), 1, {}};
            b.data.assign(params.begin() + static_cast<std::ptrdiff_t>(d.bias_offset),
                          params.begin() + static_cast<std::ptrdiff_t>(d.bias_offset + static_cast<std::size_t>(d.out)));
            f.blocks.push_back(std::move(w));
            f.blocks.push_back(std::move(b));
        }
    };
    add_layers(net.main_layers(), "main.");
    add_layers(net.uncertainty_layers(), "uncertainty.");
    write_block_file(path, f);
}

inline DlModel read_checkpoint(const std::filesystem::path& path) {
    const BlockFile f = read_block_file(path);
    if (f.header.value("format", "") != "dticalib-model")
        throw DataError(path.string() + " is not a model checkpoint");
    if (f.header.value("version", -1) != kCheckpointVersion)
        throw DataError(path.string() + ": unsupported checkpoint version");
    DlModel model;
    try {
        const auto& s = f.header.at("spec");
        MlpSpec spec;
        spec.input_dim = s.at("input_dim").get<int>();
        spec.hidden_main = s.at("hidden_main").get<std::vector<int>>();
        spec.hidden_uncertainty = s.at("hidden_uncertainty").get<std::vector<int>>();
        spec.dropout_rate = s.at("dropout_rate").get<double>();
        spec.output_unit = s.at("output_unit").get<double>();
        spec.u_min = s.at("u_min").get<double>();
        spec.u_max = s.at("u_max").get<double>();
        const auto& c = f.header.at("config");
        model.config.lambda = c.at("lambda").get<double>();
        model.config.learning_rate = c.at("learning_rate").get<double>();
        model.config.batch_size = c.at("batch_size").get<int>();
        model.config.epochs = c.at("epochs").get<int>();
        model.config.eval_interval = c.at("eval_interval").get<int>();
        model.config.early_stop_patience = c.at("early_stop_patience").get<int>();
        model.config.validation_fraction = c.at("validation_fraction").get<double>();
        model.config.seed = f.header.at("seed").get<std::uint64_t>();
        model.epochs_run = f.header.at("epoch").get<int>();
        const auto& sc = f.header.at("scheme");
        model.scheme.bvalues = sc.at("bvalues").get<std::vector<double>>();
        for (const auto& d : sc.at("directions")) {
            const auto v = d.get<std::vector<double>>();
            if (v.size() != 3) throw DataError("direction entries must have 3 components");
            model.scheme.directions.emplace_back(v[0], v[1], v[2]);
        }
        model.network = TwoBranchMlp(spec);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed checkpoint header: " + e.what());
    }
    auto params = model.network.parameters();
    const auto load_layers = [&](const std::vector<TwoBranchMlp::Dense>& layers, const std::string& prefix) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& d = layers[l];
            const Block& w = f.at(prefix + std::to_string(l) + ".weight");
            const Block& b = f.at(prefix + std::to_string(l) + ".bias");
            if (w.rows != static_cast<std::size_t>(d.out) || w.cols != static_cast<std::size_t>(d.in) ||
                b.rows != static_cast<std::size_t>(d.out))
                throw DataError(path.string() + ": layer " + prefix + std::to_string(l) + " shape mismatch");
            for (int r = 0; r < d.out; ++r)
                for (int c = 0; c < d.in; ++c)
                    params[d.weight_offset + static_cast<std::size_t>(c * d.out + r)] =
                        w.data[static_cast<std::size_t>(r * d.in + c)];
            std::copy(b.data.begin(), b.data.end(), params.begin() + static_cast<std::ptrdiff_t>(d.bias_offset));
        }
    };
    load_layers(model.network.main_layers(), "main.");
    load_layers(model.network.uncertainty_layers(), "uncertainty.");
    model.scheme.validate();
    return model;
}

}  // namespace dticalib::io
