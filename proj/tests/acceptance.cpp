// Acceptance runner: one PASS/FAIL line per criterion. Exit status is
// non-zero if any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/tools/minima.hpp>

#include "dticalib/bootstrap.hpp"
#include "dticalib/calibration.hpp"
#include "dticalib/dl_model.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/io/hash.hpp"
#include "dticalib/simulation.hpp"
#include "support.hpp"

#ifndef DTICALIB_CLI_PATH
#error "DTICALIB_CLI_PATH must point at the dticalib executable"
#endif

namespace {

using namespace dticalib;
using namespace dticalib::fixture;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

Outcome noiseless_round_trip() {
    const auto t0 = Clock::now();
    const GradientScheme scheme = hemisphere_scheme(30, 1000.0, 1);
    const Eigen::MatrixXd design = design_matrix(scheme);
    Stream rng(stream_key(20261014, 1));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const DiffusionTensor truth = random_spd(rng);
        const auto signals = predict_signal(truth, scheme);
        for (FitMethod m : {FitMethod::ols, FitMethod::wlls, FitMethod::cwlls}) {
            const auto est = fit(m, signals, design).tensor;
            for (std::size_t j = 0; j < 6; ++j) {
                const double rel = std::abs(est.elements[j] - truth.elements[j]) / std::abs(truth.elements[j]);
                worst = std::max(worst, rel);
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-8 && secs < 10.0,
            fmt("max per-element relative error %.2e over 3x1000 fits (< 1e-8), %.2f s (< 10 s)", worst, secs)};
}

Outcome bootstrap_vs_oracle() {
    const auto t0 = Clock::now();
    PhantomSpec spec;
    spec.n_voxels = 50;
    spec.generator = phantom::Prolate{0.8, 0.9e-3};
    spec.orientation = Orientation::uniform;
    spec.scheme = hemisphere_scheme(30, 1000.0, 5);
    spec.snr_db = 30.0;
    spec.seed = 4242;
    const auto voxels = make_phantom(spec);
    const Eigen::MatrixXd design = design_matrix(spec.scheme);
    std::array<std::vector<double>, 3> rel;
    for (std::size_t v = 0; v < voxels.size(); ++v) {
        const auto wbs = summarize_uncertainty(wild_bootstrap(voxels[v].signals, design, 1000, spec.seed, v));
        const auto mc = monte_carlo_oracle(*voxels[v].truth, spec.scheme, spec.snr_db, 2000, stream_key(spec.seed, v));
        rel[0].push_back(std::abs(wbs.sigma_fa - mc.sigma_fa) / mc.sigma_fa);
        rel[1].push_back(std::abs(wbs.sigma_md - mc.sigma_md) / mc.sigma_md);
        rel[2].push_back(std::abs(wbs.theta95 - mc.theta95) / mc.theta95);
    }
    const double fa = median(rel[0]);
    const double md = median(rel[1]);
    const double th = median(rel[2]);
    const double secs = seconds_since(t0);
    return {fa < 0.3 && md < 0.3 && th < 0.3 && secs < 300.0,
            fmt("median relative gap sigma(FA) %.3f, sigma(MD) %.3f, theta95 %.3f (< 0.30), %.1f s", fa, md, th, secs)};
}

Outcome stationarity() {
    Stream rng(stream_key(7, 3));
    double worst = 0.0;
    const std::array<double, 6> zeros{};
    for (int i = 0; i < 100; ++i) {
        const double r = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
        const std::array<double, 6> pred{r, 0, 0, 0, 0, 0};
        for (double lambda : {0.5, 1.0, 2.0}) {
            const auto f = [&](double u) { return loss_attenuated(pred, zeros, u, lambda); };
            const auto [u_star, value] = boost::math::tools::brent_find_minima(f, -30.0, 30.0, 50);
            (void)value;
            worst = std::max(worst, std::abs(u_star - std::log(r / lambda)));
        }
    }
    return {worst < 1e-3, fmt("max |u_numeric - ln(R/lambda)| = %.2e over 300 cases (< 1e-3)", worst)};
}

Outcome gradient_check() {
    MlpSpec spec;
    spec.input_dim = 31;
    TwoBranchMlp net(spec);
    net.initialize(99);
    Stream rng(stream_key(99, 1));
    const Eigen::Index batch = 8;
    Eigen::MatrixXd x(spec.input_dim, batch);
    Eigen::MatrixXd t(6, batch);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(0.05, 1.0);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0, 2.0);
    const auto masks = net.draw_masks(batch, rng);
    std::vector<double> grad;
    net.loss_and_gradient(x, t, 1.0, &masks, grad);

    constexpr double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    auto params = net.parameters();
    while (checked < 20) {
        const auto i = static_cast<std::size_t>(rng.below(params.size()));
        const double keep = params[i];
        params[i] = keep + h;
        const double up = net.loss(x, t, 1.0, &masks);
        params[i] = keep - h;
        const double down = net.loss(x, t, 1.0, &masks);
        params[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
        worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
        ++checked;
    }
    return {worst < 1e-4, fmt("max relative error %.2e over 20 coordinates (< 1e-4)", worst)};
}

Outcome ence_degenerate() {
    Stream rng(stream_key(5, 5));
    std::vector<PredictionTriple> triples(5000);
    double sse = 0.0;
    for (auto& t : triples) {
        t.truth = rng.normal();
        t.estimate = t.truth + rng.normal(0.0, rng.uniform(0.1, 3.0));
        sse += t.error() * t.error();
    }
    const double rmse = std::sqrt(sse / static_cast<double>(triples.size()));
    for (auto& t : triples) t.sigma = rmse;
    const double e = ence(bin_rmv_rmse(triples, 1));
    return {e < 1e-12, fmt("ENCE = %.2e (< 1e-12)", e)};
}

Outcome aucc_scale_invariance() {
    auto triples = miscalibrated_triples(10000, 1.3, 17);
    const double cap = 3.0;
    const double base = picp_mpiw_curve(triples, cap).aucc;
    double worst = 0.0;
    for (double c : {0.1, 10.0}) {
        auto scaled = triples;
        for (auto& t : scaled) t.sigma *= c;
        worst = std::max(worst, std::abs(picp_mpiw_curve(scaled, cap).aucc - base));
    }
    return {worst < 1e-12, fmt("AUCC %.6f, max change %.2e (< 1e-12)", base, worst)};
}

Outcome aucc_ordering() {
    int wins = 0;
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Stream rng(stream_key(seed, 0xA0CC));
        std::vector<PredictionTriple> oracle(10000);
        double max_error = 0.0;
        for (auto& t : oracle) {
            t.truth = rng.uniform(0.0, 1.0);
            t.estimate = t.truth + rng.normal();
            t.sigma = std::abs(t.error());
            max_error = std::max(max_error, t.sigma);
        }
        auto permuted = oracle;
        for (std::size_t i = permuted.size(); i > 1; --i)
            std::swap(permuted[i - 1].sigma, permuted[rng.below(i)].sigma);
        // Same rule as the MD and theta defaults: cap at twice the largest error.
        const double cap = 2.0 * max_error;
        const double a = picp_mpiw_curve(oracle, cap).aucc;
        const double b = picp_mpiw_curve(permuted, cap).aucc;
        if (a > b) ++wins;
        min_gap = std::min(min_gap, a - b);
    }
    return {wins == 20, fmt("oracle > permuted in %d/20 seeds, smallest gap %.4f (cap = 2 x max |error|)", wins, min_gap)};
}

Outcome recalibration_efficacy() {
    const auto triples = miscalibrated_triples(10000, 2.0, 2026);
    Stream rng(stream_key(2026, 0x5917));
    std::vector<std::size_t> order(triples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<PredictionTriple> cal;
    std::vector<PredictionTriple> test;
    for (std::size_t i = 0; i < order.size(); ++i) (i < order.size() / 2 ? cal : test).push_back(triples[order[i]]);

    const IsotonicMap map = fit_isotonic(cal);
    const auto recal = recalibrate(map, test);
    const double cap = 2.0;
    const auto before = evaluate_calibration(test, cap);
    const auto after = evaluate_calibration(recal, cap);
    const double reduction = 1.0 - after.ence / before.ence;
    const bool strict = map.strictly_increasing();
    const double d_aucc = std::abs(after.aucc - before.aucc);
    const bool ence_ok = reduction >= 0.5;
    const bool aucc_ok = !strict || d_aucc < 1e-9;
    return {ence_ok && aucc_ok,
            fmt("ENCE %.4f -> %.4f (reduction %.1f%%, need >= 50%%); map strictly increasing: %s; "
                "|dAUCC| = %.2e (need < 1e-9 when strict)",
                before.ence, after.ence, 100.0 * reduction, strict ? "yes" : "no", d_aucc)};
}

Outcome pava_optimality() {
    Stream rng(stream_key(9, 9));
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        const auto n = static_cast<std::size_t>(1 + c % 8);
        std::vector<double> y(n);
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.normal();
            w[i] = c % 2 == 0 ? 1.0 : rng.uniform(0.1, 5.0);
        }
        const auto fast = pava(y, w);
        const auto slow = brute_force_isotonic(y, w);
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
    }
    return {worst < 1e-10, fmt("max |PAVA - exhaustive| = %.2e over 100 cases (< 1e-10)", worst)};
}

GradientScheme toy_scheme() { return hemisphere_scheme(30, 1000.0, 5); }

PhantomSpec toy_population(std::size_t n, std::uint64_t seed, double snr_lo, double snr_hi) {
    PhantomSpec spec;
    spec.n_voxels = n;
    spec.generator = phantom::RandomSpd{0.2e-3, 1.8e-3};
    spec.orientation = Orientation::uniform;
    spec.scheme = toy_scheme();
    spec.snr_db = snr_lo;
    if (snr_hi > snr_lo) spec.snr_db_max = snr_hi;
    spec.seed = seed;
    return spec;
}

TrainConfig toy_train_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.seed = seed;
    return cfg;
}

Outcome noise_trend() {
    const auto train_set = make_phantom(toy_population(3000, 31, 20.0, 35.0));
    const DlModel model = train(as_examples(train_set), toy_scheme(), MlpSpec{}, toy_train_config(31));

    std::vector<double> mean_u;
    std::vector<double> mean_sfa;
    std::ostringstream trace;
    for (double snr = 35.0; snr >= 20.0 - 1e-9; snr -= 3.0) {
        auto spec = toy_population(300, 808, snr, snr);
        const auto voxels = make_phantom(spec);
        std::vector<double> u;
        std::vector<double> sfa;
        for (std::size_t v = 0; v < voxels.size(); ++v) {
            const auto p = predict_mc_dropout(model, voxels[v].signals, kDefaultDropoutSamples, 808, v);
            u.push_back(p.aleatoric_u);
            sfa.push_back(summarize_uncertainty(p.samples).sigma_fa);
        }
        mean_u.push_back(mean_of(u));
        mean_sfa.push_back(mean_of(sfa));
        trace << fmt(" %g:%.3f", snr, mean_u.back());
    }
    int violations = 0;
    for (std::size_t i = 1; i < mean_u.size(); ++i)
        if (!(mean_u[i] > mean_u[i - 1])) ++violations;
    const bool sfa_ok = mean_sfa.back() > mean_sfa.front();
    return {violations <= 1 && sfa_ok,
            fmt("mean u by SNR [dB:u]%s; %d violated steps of 5 (<= 1); sigma(FA) 20 dB %.4f vs 35 dB %.4f",
                trace.str().c_str(), violations, mean_sfa.back(), mean_sfa.front())};
}

Outcome distribution_shift() {
    int passes = 0;
    std::ostringstream trace;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        PhantomSpec a = toy_population(3000, 100 + seed, 30.0, 30.0);
        a.generator = phantom::TwoPopulation{0.2e-3, 1.8e-3, 1.8, 0.0};
        const auto train_set = make_phantom(a);
        const DlModel model = train(as_examples(train_set), toy_scheme(), MlpSpec{}, toy_train_config(seed));

        std::vector<double> in_dist;
        for (std::size_t v = 0; v < 300; ++v)
            in_dist.push_back(summarize_uncertainty(
                predict_mc_dropout(model, train_set[v].signals, kDefaultDropoutSamples, seed, v).samples).sigma_md);

        PhantomSpec b = toy_population(300, 200 + seed, 30.0, 30.0);
        b.generator = phantom::TwoPopulation{0.2e-3, 1.8e-3, 1.8, 1.0};
        const auto shifted = make_phantom(b);
        std::vector<double> out_dist;
        for (std::size_t v = 0; v < shifted.size(); ++v)
            out_dist.push_back(summarize_uncertainty(
                predict_mc_dropout(model, shifted[v].signals, kDefaultDropoutSamples, seed, v).samples).sigma_md);

        const double threshold = mean_of(in_dist) + 2.0 * population_stddev(in_dist);
        const double shifted_mean = mean_of(out_dist);
        if (shifted_mean >= threshold) ++passes;
        trace << fmt(" [%.3g vs %.3g]", shifted_mean, threshold);
    }
    return {passes == 5, fmt("%d/5 seeds; mean sigma(MD) on B vs A mean+2sd:%s", passes, trace.str().c_str())};
}

Outcome cone_geometry() {
    std::vector<Vec3> same(100, Vec3(0.3, -0.5, 0.8).normalized());
    const double identical = cone_angle_95(same);

    Stream rng(stream_key(12, 12));
    std::vector<Vec3> iso(10000);
    for (auto& v : iso) v = random_unit_vector(rng);
    const double theta = cone_angle_95(iso);

    auto flipped = iso;
    for (std::size_t i = 0; i < flipped.size(); i += 2) flipped[i] = -flipped[i];
    const double theta_flip = cone_angle_95(flipped);

    const double target = 84.3;
    const bool ok = identical == 0.0 && std::abs(theta - target) <= 0.5 && theta_flip == theta;
    return {ok, fmt("identical replicates %.3g deg (need 0); isotropic K=1e4 %.3f deg vs required 84.3 +- 0.5 "
                    "(arccos(0.05) = %.3f); sign flips change it by %.3g",
                    identical, theta, isotropic_theta95_deg(), std::abs(theta_flip - theta))};
}

std::map<std::string, std::string> hash_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = io::sha256_file(e.path());
    return out;
}

int run_pipeline(const fs::path& config, const std::string& threads) {
    for (const char* cmd : {"simulate", "fit", "bootstrap", "train", "predict", "calibrate", "evaluate", "curves"}) {
        const std::string line = "DTICALIB_THREADS=" + threads + " \"" DTICALIB_CLI_PATH "\" " + cmd + " --config \"" +
                                 config.string() + "\"";
        if (const int rc = std::system(line.c_str()); rc != 0) return rc;
    }
    return 0;
}

Outcome reproducibility() {
    const fs::path root = fs::temp_directory_path() / ("dticalib_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path config = root / "pipeline.json";
    std::ofstream(config) << R"({
  "seed": 13,
  "output_dir": "out",
  "phantom": {"n_voxels": 300, "generator": {"type": "random_spd", "eig_min": 0.2e-3, "eig_max": 1.8e-3},
              "scheme": {"n_directions": 30, "bvalue": 1000, "n_b0": 5}, "snr_db": 25, "snr_db_max": 35},
  "bootstrap": {"iterations": 100},
  "dropout": {"samples": 20},
  "train": {"epochs": 20},
  "calibration": {"source": "wbs", "split": 0.5}
})";
    const fs::path out = root / "out";
    if (run_pipeline(config, "1") != 0) return {false, "first pipeline run failed"};
    const auto first = hash_tree(out);
    fs::remove_all(out);
    if (run_pipeline(config, "3") != 0) return {false, "second pipeline run failed"};
    const auto second = hash_tree(out);

    std::size_t listed = 0;
    for (const auto& [name, _] : first) listed += name.rfind("manifest_", 0) == 0 ? 0 : 1;
    const bool same = first == second;
    fs::remove_all(root);
    return {same && listed > 0,
            fmt("%zu files (%zu data outputs) compared across reruns with 1 and 3 workers: %s", first.size(), listed,
                same ? "byte-identical" : "MISMATCH")};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "noiseless round trip", noiseless_round_trip},
        {2, "wild bootstrap vs Monte-Carlo oracle", bootstrap_vs_oracle},
        {3, "attenuated-loss stationarity", stationarity},
        {4, "gradient correctness", gradient_check},
        {5, "ENCE degenerate forecaster", ence_degenerate},
        {6, "AUCC scale invariance", aucc_scale_invariance},
        {7, "AUCC ordering", aucc_ordering},
        {8, "recalibration efficacy", recalibration_efficacy},
        {9, "PAVA optimality", pava_optimality},
        {10, "aleatoric/epistemic noise trend", noise_trend},
        {11, "distribution-shift surrogate", distribution_shift},
        {12, "cone geometry", cone_geometry},
        {13, "CLI reproducibility", reproducibility},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
