#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dticalib/bootstrap.hpp"
#include "dticalib/error.hpp"
#include "dticalib/fitting.hpp"
#include "dticalib/rng.hpp"
#include "dticalib/tensor_core.hpp"

namespace dticalib {

/// Per-voxel two-branch estimator. The main branch regresses the six tensor
/// elements and carries dropout on its hidden layers; the uncertainty branch
/// maps the same input to a scalar log-scale uncertainty u and never drops
/// units, so u depends on the input alone.
struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_main{64, 64, 64};
    std::vector<int> hidden_uncertainty{32, 32};
    double dropout_rate = 0.5;
    /// Network outputs are tensor elements divided by this (mm^2/s).
    double output_unit = 1e-3;
    double u_min = -15.0;
    double u_max = 15.0;
};

struct TrainConfig {
    double lambda = 1.0;
    double learning_rate = 1e-3;
    int batch_size = 256;
    int epochs = 200;
    std::uint64_t seed = 0;
    /// Validation runs every `eval_interval` epochs; each evaluation that
    /// fails to improve halves the learning rate.
    int eval_interval = 10;
    /// Training stops after this many consecutive non-improving evaluations.
    int early_stop_patience = 2;
    double validation_fraction = 0.15;
};

/// Attenuated L1 loss for one voxel: sum_j |pred_j - truth_j| e^-u + lambda u.
inline double loss_attenuated(std::span<const double> pred, std::span<const double> truth,
                              double u, double lambda) {
    double r = 0.0;
    for (std::size_t j = 0; j < pred.size(); ++j) r += std::abs(pred[j] - truth[j]);
    return r * std::exp(-u) + lambda * u;
}

/// Minimizer of R e^-u + lambda u over u.
inline double optimal_log_uncertainty(double residual_sum, double lambda) {
    return std::log(residual_sum / lambda);
}

/// Signals divided by the mean b=0 signal, or by the OLS-fitted S0 when the
/// scheme has no b=0 entry. Returns the normalized vector and ln S0.
inline std::pair<Eigen::VectorXd, double> normalize_signals(std::span<const double> signals,
                                                            const GradientScheme& scheme) {
    if (signals.size() != scheme.size())
        throw DataError("signal count does not match scheme size");
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < signals.size(); ++i) {
        if (scheme.bvalues[i] == 0.0) {
            sum += signals[i];
            ++count;
        }
    }
    double s0 = count > 0 ? sum / count : 0.0;
    if (!(s0 > 0.0)) s0 = std::exp(fit_ols(signals, scheme).tensor.ln_s0);
    if (!(s0 > 0.0) || !std::isfinite(s0)) throw DataError("cannot normalize signals");
    Eigen::VectorXd x(static_cast<Eigen::Index>(signals.size()));
    for (std::size_t i = 0; i < signals.size(); ++i)
        x[static_cast<Eigen::Index>(i)] = signals[i] / s0;
    return {x, std::log(s0)};
}

class TwoBranchMlp {
public:
    struct Dense {
        int in = 0;
        int out = 0;
        std::size_t weight_offset = 0;  // out x in, column-major
        std::size_t bias_offset = 0;
    };

    /// Dropout masks per main hidden layer (width x batch), entries 0 or
    /// 1/(1-rate).
    using Masks = std::vector<Eigen::MatrixXd>;

    struct Output {
        Eigen::MatrixXd tensor;  // 6 x batch, in output units
        Eigen::RowVectorXd u;    // clamped
    };

    TwoBranchMlp() = default;

    explicit TwoBranchMlp(MlpSpec spec) : spec_(std::move(spec)) {
        if (spec_.input_dim < 1) throw UsageError("model input_dim must be positive");
        if (!(spec_.dropout_rate >= 0.0 && spec_.dropout_rate < 1.0))
            throw UsageError("dropout rate must be in [0, 1)");
        std::size_t offset = 0;
        const auto add = [&](std::vector<Dense>& layers, int in, int out) {
            if (out < 1) throw UsageError("layer widths must be positive");
            Dense d{in, out, offset, 0};
            offset += static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
            d.bias_offset = offset;
            offset += static_cast<std::size_t>(out);
            layers.push_back(d);
        };
        int in = spec_.input_dim;
        for (int w : spec_.hidden_main) {
            add(main_, in, w);
            in = w;
        }
        add(main_, in, 6);
        in = spec_.input_dim;
        for (int w : spec_.hidden_uncertainty) {
            add(uncertainty_, in, w);
            in = w;
        }
        add(uncertainty_, in, 1);
        params_.assign(offset, 0.0);
    }

    [[nodiscard]] const MlpSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] std::span<double> parameters() noexcept { return params_; }
    [[nodiscard]] std::span<const double> parameters() const noexcept { return params_; }
    [[nodiscard]] const std::vector<Dense>& main_layers() const noexcept { return main_; }
    [[nodiscard]] const std::vector<Dense>& uncertainty_layers() const noexcept {
        return uncertainty_;
    }

    /// Scaled uniform fan-in initialization, limit sqrt(6 / fan_in); zero biases.
    void initialize(std::uint64_t seed) {
        Stream rng(stream_key(seed, 0x1417));
        for (auto* layers : {&main_, &uncertainty_}) {
            for (const auto& d : *layers) {
                const double limit = std::sqrt(6.0 / d.in);
                for (std::size_t i = 0; i < static_cast<std::size_t>(d.in * d.out); ++i)
                    params_[d.weight_offset + i] = rng.uniform(-limit, limit);
                for (std::size_t i = 0; i < static_cast<std::size_t>(d.out); ++i)
                    params_[d.bias_offset + i] = 0.0;
            }
        }
    }

    [[nodiscard]] Masks draw_masks(Eigen::Index batch, Stream& rng) const {
        Masks masks;
        const double keep_scale = 1.0 / (1.0 - spec_.dropout_rate);
        for (std::size_t l = 0; l + 1 < main_.size(); ++l) {
            Eigen::MatrixXd m(main_[l].out, batch);
            for (Eigen::Index c = 0; c < batch; ++c)
                for (Eigen::Index r = 0; r < m.rows(); ++r)
                    m(r, c) = rng.uniform() < spec_.dropout_rate ? 0.0 : keep_scale;
            masks.push_back(std::move(m));
        }
        return masks;
    }

    /// Forward pass over a batch stored one sample per column. Null masks
    /// disable dropout.
    [[nodiscard]] Output forward(const Eigen::MatrixXd& x, const Masks* masks = nullptr) const {
        Cache cache;
        return forward_cached(x, masks, cache);
    }

    /// Mean attenuated loss over the batch and its gradient with respect to
    /// every parameter (resized to parameters().size()).
    double loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& target,
                             double lambda, const Masks* masks,
                             std::vector<double>& grad) const {
        Cache cache;
        const Output out = forward_cached(x, masks, cache);
        const Eigen::Index batch = x.cols();
        const double inv_b = 1.0 / static_cast<double>(batch);

        const Eigen::MatrixXd diff = out.tensor - target;
        const Eigen::RowVectorXd residual_sum = diff.cwiseAbs().colwise().sum();
        const Eigen::RowVectorXd attenuation = (-out.u.array()).exp().matrix();
        const double loss =
            (residual_sum.cwiseProduct(attenuation).sum() + lambda * out.u.sum()) * inv_b;

        grad.assign(params_.size(), 0.0);
        Eigen::MatrixXd delta = diff.unaryExpr([](double v) {
            return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        });
        delta = (delta.array().rowwise() * (attenuation.array() * inv_b)).matrix();
        backward(main_, cache.main_pre, cache.main_post, masks, delta, grad);

        Eigen::MatrixXd delta_u(1, batch);
        for (Eigen::Index c = 0; c < batch; ++c) {
            const double raw = cache.u_raw[c];
            const bool active = raw > spec_.u_min && raw < spec_.u_max;
            delta_u(0, c) = active ? (lambda - residual_sum[c] * attenuation[c]) * inv_b : 0.0;
        }
        backward(uncertainty_, cache.unc_pre, cache.unc_post, nullptr, delta_u, grad);
        return loss;
    }

    /// Mean loss without gradient.
    [[nodiscard]] double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& target,
                              double lambda, const Masks* masks = nullptr) const {
        const Output out = forward(x, masks);
        const Eigen::RowVectorXd r = (out.tensor - target).cwiseAbs().colwise().sum();
        const double total =
            r.cwiseProduct((-out.u.array()).exp().matrix()).sum() + lambda * out.u.sum();
        return total / static_cast<double>(x.cols());
    }

private:
    struct Cache {
        std::vector<Eigen::MatrixXd> main_pre;   // pre-activations per layer
        std::vector<Eigen::MatrixXd> main_post;  // inputs to each layer
        std::vector<Eigen::MatrixXd> unc_pre;
        std::vector<Eigen::MatrixXd> unc_post;
        Eigen::RowVectorXd u_raw;
    };

    [[nodiscard]] Eigen::Map<const Eigen::MatrixXd> weights(const Dense& d) const {
        return {params_.data() + d.weight_offset, d.out, d.in};
    }
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> bias(const Dense& d) const {
        return {params_.data() + d.bias_offset, d.out};
    }

    Eigen::MatrixXd run_branch(const std::vector<Dense>& layers, const Eigen::MatrixXd& x,
                               const Masks* masks, std::vector<Eigen::MatrixXd>& pre,
                               std::vector<Eigen::MatrixXd>& post) const {
        Eigen::MatrixXd h = x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            post.push_back(h);
            Eigen::MatrixXd z = weights(layers[l]) * h;
            z.colwise() += bias(layers[l]);
            if (l + 1 == layers.size()) {
                pre.push_back(z);
                return z;
            }
            h = z.cwiseMax(0.0);
            if (masks) h = h.cwiseProduct((*masks)[l]);
            pre.push_back(std::move(z));
        }
        return h;
    }

    Output forward_cached(const Eigen::MatrixXd& x, const Masks* masks, Cache& cache) const {
        if (x.rows() != spec_.input_dim)
            throw DataError("model input has " + std::to_string(x.rows()) +
                            " features, expected " + std::to_string(spec_.input_dim));
        if (masks && masks->size() + 1 != main_.size())
            throw DataError("dropout mask count does not match main branch depth");
        Output out;
        out.tensor = run_branch(main_, x, masks, cache.main_pre, cache.main_post);
        const Eigen::MatrixXd u = run_branch(uncertainty_, x, nullptr, cache.unc_pre,
                                             cache.unc_post);
        cache.u_raw = u.row(0);
        out.u = cache.u_raw.cwiseMax(spec_.u_min).cwiseMin(spec_.u_max);
        return out;
    }

    void backward(const std::vector<Dense>& layers, const std::vector<Eigen::MatrixXd>& pre,
                  const std::vector<Eigen::MatrixXd>& post, const Masks* masks,
                  Eigen::MatrixXd delta, std::vector<double>& grad) const {
        for (std::size_t l = layers.size(); l-- > 0;) {
            const Dense& d = layers[l];
            Eigen::Map<Eigen::MatrixXd> gw(grad.data() + d.weight_offset, d.out, d.in);
            Eigen::Map<Eigen::VectorXd> gb(grad.data() + d.bias_offset, d.out);
            gw.noalias() += delta * post[l].transpose();
            gb += delta.rowwise().sum();
            if (l == 0) break;
            Eigen::MatrixXd up = weights(d).transpose() * delta;
            if (masks) up = up.cwiseProduct((*masks)[l - 1]);
            delta = up.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
    }

    MlpSpec spec_;
    std::vector<Dense> main_;
    std::vector<Dense> uncertainty_;
    std::vector<double> params_;
};

/// A trained estimator: network weights plus the acquisition it consumes.
struct DlModel {
    TwoBranchMlp network;
    GradientScheme scheme;
    TrainConfig config;
    int epochs_run = 0;
};

struct TrainingExample {
    std::vector<double> signals;
    DiffusionTensor truth;
};

struct TrainReport {
    std::vector<double> train_loss;       // per epoch, dropout active
    std::vector<double> validation_loss;  // per evaluation, dropout off
    int epochs_run = 0;
    bool early_stopped = false;
};

namespace detail {

inline void build_matrices(const TwoBranchMlp& net, const GradientScheme& scheme,
                           std::span<const TrainingExample> data,
                           std::span<const std::size_t> idx, Eigen::MatrixXd& x,
                           Eigen::MatrixXd& t) {
    const double unit = net.spec().output_unit;
    x.resize(static_cast<Eigen::Index>(scheme.size()), static_cast<Eigen::Index>(idx.size()));
    t.resize(6, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) {
        const auto& ex = data[idx[c]];
        const auto col = static_cast<Eigen::Index>(c);
        x.col(col) = normalize_signals(ex.signals, scheme).first;
        for (int j = 0; j < 6; ++j) t(j, col) = ex.truth.elements[static_cast<std::size_t>(j)] / unit;
    }
}

inline std::vector<std::size_t> shuffled(std::size_t n, Stream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

}  // namespace detail

/// Minibatch Adam on the attenuated loss. A seeded shuffle holds out
/// `validation_fraction` of the examples; the best validation weights are
/// kept.
inline DlModel train(std::span<const TrainingExample> dataset, const GradientScheme& scheme,
                     MlpSpec spec, const TrainConfig& cfg, TrainReport* report = nullptr) {
    scheme.validate();
    if (!(cfg.lambda > 0.0)) throw UsageError("lambda must be positive");
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.eval_interval < 1)
        throw UsageError("batch_size, epochs and eval_interval must be positive");
    if (dataset.size() < 2) throw DataError("training needs at least 2 examples");
    spec.input_dim = static_cast<int>(scheme.size());
    DlModel model{TwoBranchMlp(spec), scheme, cfg, 0};
    TwoBranchMlp& net = model.network;
    net.initialize(cfg.seed);

    Stream split_rng(stream_key(cfg.seed, 0x5B117));
    const auto order = detail::shuffled(dataset.size(), split_rng);
    auto n_val = static_cast<std::size_t>(
        std::llround(cfg.validation_fraction * static_cast<double>(dataset.size())));
    n_val = std::min(n_val, dataset.size() - 1);
    const std::vector<std::size_t> train_idx(order.begin(),
                                             order.end() - static_cast<std::ptrdiff_t>(n_val));
    const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val),
                                           order.end());

    Eigen::MatrixXd x_all;
    Eigen::MatrixXd t_all;
    detail::build_matrices(net, scheme, dataset, train_idx, x_all, t_all);
    Eigen::MatrixXd x_val;
    Eigen::MatrixXd t_val;
    detail::build_matrices(net, scheme, dataset, val_idx, x_val, t_val);

    const std::size_t n_params = net.parameters().size();
    std::vector<double> m1(n_params, 0.0);
    std::vector<double> m2(n_params, 0.0);
    std::vector<double> grad;
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    double lr = cfg.learning_rate;
    std::uint64_t step = 0;

    std::vector<double> best(net.parameters().begin(), net.parameters().end());
    double best_val = std::numeric_limits<double>::infinity();
    int bad_evals = 0;
    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep = {};

    const auto n_train = static_cast<std::size_t>(x_all.cols());
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Stream epoch_rng(stream_key(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        const auto perm = detail::shuffled(n_train, epoch_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n_train; start += batch) {
            const std::size_t end = std::min(n_train, start + batch);
            const auto bs = static_cast<Eigen::Index>(end - start);
            Eigen::MatrixXd xb(x_all.rows(), bs);
            Eigen::MatrixXd tb(6, bs);
            for (Eigen::Index c = 0; c < bs; ++c) {
                const auto src = static_cast<Eigen::Index>(perm[start + static_cast<std::size_t>(c)]);
                xb.col(c) = x_all.col(src);
                tb.col(c) = t_all.col(src);
            }
            const auto masks = net.draw_masks(bs, epoch_rng);
            const double l = net.loss_and_gradient(xb, tb, cfg.lambda, &masks, grad);
            if (!std::isfinite(l)) throw DataError("divergence at epoch " + std::to_string(epoch));
            epoch_loss += l * static_cast<double>(bs);

            ++step;
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            auto p = net.parameters();
            for (std::size_t i = 0; i < n_params; ++i) {
                m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * grad[i];
                m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * grad[i] * grad[i];
                p[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
            }
        }
        rep.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
        rep.epochs_run = epoch + 1;

        if ((epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == cfg.epochs) {
            const double v = net.loss(x_val, t_val, cfg.lambda);
            if (!std::isfinite(v)) throw DataError("divergence at epoch " + std::to_string(epoch));
            rep.validation_loss.push_back(v);
            if (v < best_val) {
                best_val = v;
                best.assign(net.parameters().begin(), net.parameters().end());
                bad_evals = 0;
            } else {
                lr *= 0.5;
                if (++bad_evals >= cfg.early_stop_patience) {
                    rep.early_stopped = true;
                    break;
                }
            }
        }
    }
    std::copy(best.begin(), best.end(), net.parameters().begin());
    model.epochs_run = rep.epochs_run;
    return model;
}

struct DlPrediction {
    DiffusionTensor tensor;
    double aleatoric_u = 0.0;
};

inline DiffusionTensor tensor_from_output(const Eigen::Ref<const Eigen::VectorXd>& out,
                                          double unit, double ln_s0) {
    DiffusionTensor t;
    for (int j = 0; j < 6; ++j) t.elements[static_cast<std::size_t>(j)] = out[j] * unit;
    t.ln_s0 = ln_s0;
    return t;
}

/// Deterministic pass with dropout disabled.
inline DlPrediction predict(const DlModel& model, std::span<const double> signals) {
    const auto [x, ln_s0] = normalize_signals(signals, model.scheme);
    const auto out = model.network.forward(x);
    return {tensor_from_output(out.tensor.col(0), model.network.spec().output_unit, ln_s0),
            out.u[0]};
}

struct McDropoutPrediction {
    TensorSampleSet samples;
    double aleatoric_u = 0.0;
    /// Element-wise mean of the samples.
    DiffusionTensor mean_tensor;
};

inline constexpr int kDefaultDropoutSamples = 100;

/// `n_samples` stochastic passes with fresh dropout masks drawn from
/// stream (seed, voxel). u comes from the deterministic uncertainty branch.
inline McDropoutPrediction predict_mc_dropout(const DlModel& model,
                                              std::span<const double> signals, int n_samples,
                                              std::uint64_t seed, std::uint64_t voxel = 0) {
    if (n_samples < 1) throw DataError("mc dropout needs at least one sample");
    const auto [x, ln_s0] = normalize_signals(signals, model.scheme);
    const auto& net = model.network;
    const Eigen::MatrixXd batch = x.replicate(1, n_samples);
    Stream rng(stream_key(seed, voxel, 0xD20C));
    const auto masks = net.draw_masks(n_samples, rng);
    const auto out = net.forward(batch, &masks);

    McDropoutPrediction p;
    p.samples.source = SampleSource::mc_dropout;
    p.samples.tensors.reserve(static_cast<std::size_t>(n_samples));
    const double unit = net.spec().output_unit;
    for (Eigen::Index c = 0; c < n_samples; ++c)
        p.samples.tensors.push_back(tensor_from_output(out.tensor.col(c), unit, ln_s0));
    p.aleatoric_u = net.forward(x).u[0];
    const Eigen::VectorXd mean = out.tensor.rowwise().mean();
    p.mean_tensor = tensor_from_output(mean, unit, ln_s0);
    return p;
}

}  // namespace dticalib
