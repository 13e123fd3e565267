#include "cqifb/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "cqifb/binary_io.hpp"
#include "cqifb/errors.hpp"

namespace cqifb::nn {

double quantize_value(double x, int bits) {
    const double levels = std::ldexp(1.0, bits);
    const double m = std::clamp(std::round(x * levels - 0.5), 0.0, levels - 1.0);
    return (m + 0.5) / levels;
}

template <typename T>
Network<T>::Network(std::vector<LayerSpec> layers, std::optional<Shortcut> shortcut)
    : layers_(std::move(layers)), shortcut_(shortcut) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.in_dim < 1 || l.out_dim < 1) throw ConfigError("layer dimensions must be positive");
        if (l.kind != LayerKind::dense && l.in_dim != l.out_dim)
            throw ConfigError("only dense layers may change width");
        if (i > 0 && layers_[i - 1].out_dim != l.in_dim)
            throw ConfigError("layer " + std::to_string(i) + " input width does not chain");
        if (l.kind == LayerKind::dropout && !(l.param >= 0.0 && l.param < 1.0))
            throw ConfigError("dropout rate must be in [0, 1)");
        if (l.kind == LayerKind::quantize && (l.param < 1.0 || l.param > 24.0))
            throw ConfigError("quantize bits must be in [1, 24]");

        param_index_.push_back(-1);
        bn_index_.push_back(-1);
        if (l.kind == LayerKind::dense) {
            param_index_.back() = static_cast<int>(params_.size());
            params_.push_back(Matrix::Zero(l.out_dim, l.in_dim));
            params_.push_back(Matrix::Zero(l.out_dim, 1));
        } else if (l.kind == LayerKind::batchnorm) {
            param_index_.back() = static_cast<int>(params_.size());
            params_.push_back(Matrix::Ones(l.out_dim, 1));
            params_.push_back(Matrix::Zero(l.out_dim, 1));
            bn_index_.back() = static_cast<int>(running_mean_.size());
            running_mean_.push_back(Vector::Zero(l.out_dim));
            running_var_.push_back(Vector::Ones(l.out_dim));
        }
    }
    if (shortcut_) {
        const auto n = static_cast<int>(layers_.size());
        const auto& s = *shortcut_;
        if (s.from_layer < 0 || s.to_layer >= n || s.from_layer > s.to_layer)
            throw ConfigError("shortcut endpoints out of order");
        if (layers_[s.from_layer].in_dim != layers_[s.to_layer].out_dim)
            throw ConfigError("shortcut endpoints have different widths");
    }
}

template <typename T>
void Network<T>::initialize(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind != LayerKind::dense) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(layers_[i].in_dim));
        auto& w = params_[param_index_[i]];
        auto& b = params_[param_index_[i] + 1];
        // Column-major fill order is part of the determinism contract.
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<T>(rng.uniform(-bound, bound));
        for (Eigen::Index r = 0; r < b.rows(); ++r) b(r, 0) = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
}

template <typename T>
typename Network<T>::Matrix Network<T>::run(
    const Matrix& x, Mode mode, Rng* rng, Cache* cache,
    std::vector<std::pair<Vector, Vector>>* batch_stats) const {
    if (x.rows() != input_dim())
        throw ConfigError("batch width " + std::to_string(x.rows()) + " does not match input width " +
                          std::to_string(input_dim()));
    if (cache) {
        cache->mode = mode;
        cache->inputs.assign(layers_.size(), Matrix());
        cache->aux.assign(layers_.size(), Matrix());
        cache->inv_std.assign(layers_.size(), Vector());
    }
    const auto batch = x.cols();
    Matrix cur = x;
    Matrix saved;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (shortcut_ && static_cast<int>(i) == shortcut_->from_layer) saved = cur;
        if (cache) cache->inputs[i] = cur;
        Matrix next;
        switch (l.kind) {
            case LayerKind::dense: {
                const auto& w = params_[param_index_[i]];
                const auto& b = params_[param_index_[i] + 1];
                next.noalias() = w * cur;
                next.colwise() += b.col(0);
                break;
            }
            case LayerKind::batchnorm: {
                const auto& gamma = params_[param_index_[i]].col(0);
                const auto& beta = params_[param_index_[i] + 1].col(0);
                Vector mean, inv_std;
                if (mode == Mode::train) {
                    mean = cur.rowwise().mean();
                    const Matrix centered = cur.colwise() - mean;
                    const Vector var = centered.array().square().rowwise().mean();
                    inv_std = (var.array() + static_cast<T>(kBatchNormEpsilon)).rsqrt();
                    if (batch_stats) {
                        const T unbias = batch > 1 ? static_cast<T>(batch) / static_cast<T>(batch - 1) : T(1);
                        batch_stats->emplace_back(mean, var * unbias);
                    }
                } else {
                    mean = running_mean_[bn_index_[i]];
                    inv_std = (running_var_[bn_index_[i]].array() + static_cast<T>(kBatchNormEpsilon)).rsqrt();
                }
                Matrix xhat = (cur.colwise() - mean).array().colwise() * inv_std.array();
                next = (xhat.array().colwise() * gamma.array()).colwise() + beta.array();
                if (cache) {
                    cache->aux[i] = std::move(xhat);
                    cache->inv_std[i] = std::move(inv_std);
                }
                break;
            }
            case LayerKind::leaky_relu: {
                const T slope = static_cast<T>(l.param);
                next = cur.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
                break;
            }
            case LayerKind::sigmoid:
                next = cur.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
                break;
            case LayerKind::dropout: {
                if (mode == Mode::eval || l.param == 0.0) {
                    next = cur;
                    if (cache) cache->aux[i] = Matrix::Ones(cur.rows(), cur.cols());
                    break;
                }
                if (!rng) throw ConfigError("train-mode dropout needs a random generator");
                const T keep_scale = static_cast<T>(1.0 / (1.0 - l.param));
                Matrix mask(cur.rows(), cur.cols());
                for (Eigen::Index c = 0; c < mask.cols(); ++c)
                    for (Eigen::Index r = 0; r < mask.rows(); ++r)
                        mask(r, c) = rng->uniform() < l.param ? T(0) : keep_scale;
                next = cur.cwiseProduct(mask);
                if (cache) cache->aux[i] = std::move(mask);
                break;
            }
            case LayerKind::quantize: {
                const int bits = static_cast<int>(l.param);
                next = cur.unaryExpr([bits](T v) { return static_cast<T>(quantize_value(v, bits)); });
                break;
            }
        }
        if (shortcut_ && static_cast<int>(i) == shortcut_->to_layer) next += saved;
        cur = std::move(next);
    }
    return cur;
}

template <typename T>
typename Network<T>::Matrix Network<T>::forward(const Matrix& x, Mode mode, Rng* rng, Cache* cache) {
    std::vector<std::pair<Vector, Vector>> stats;
    Matrix out = run(x, mode, rng, cache, mode == Mode::train ? &stats : nullptr);
    const T m = static_cast<T>(kBatchNormMomentum);
    for (std::size_t s = 0; s < stats.size(); ++s) {
        running_mean_[s] = m * running_mean_[s] + (T(1) - m) * stats[s].first;
        running_var_[s] = m * running_var_[s] + (T(1) - m) * stats[s].second;
    }
    return out;
}

template <typename T>
typename Network<T>::Matrix Network<T>::predict(const Matrix& x) const {
    return run(x, Mode::eval, nullptr, nullptr, nullptr);
}

template <typename T>
typename Network<T>::Matrix Network<T>::forward_const(const Matrix& x, Mode mode, Rng* rng,
                                                      Cache* cache) const {
    return run(x, mode, rng, cache, nullptr);
}

template <typename T>
typename Network<T>::Gradients Network<T>::backward(const Cache& cache, const Matrix& grad_out) const {
    if (cache.inputs.size() != layers_.size()) throw ConfigError("backward needs a cache from forward");
    Gradients g;
    g.params.reserve(params_.size());
    for (const auto& p : params_) g.params.push_back(Matrix::Zero(p.rows(), p.cols()));

    Matrix grad = grad_out;
    Matrix shortcut_grad;
    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
        const auto& l = layers_[i];
        const Matrix& in = cache.inputs[i];
        if (shortcut_ && i == shortcut_->to_layer) shortcut_grad = grad;
        Matrix prev;
        switch (l.kind) {
            case LayerKind::dense: {
                const auto& w = params_[param_index_[i]];
                g.params[param_index_[i]].noalias() = grad * in.transpose();
                g.params[param_index_[i] + 1] = grad.rowwise().sum();
                prev.noalias() = w.transpose() * grad;
                break;
            }
            case LayerKind::batchnorm: {
                const auto& gamma = params_[param_index_[i]].col(0);
                const Matrix& xhat = cache.aux[i];
                const Vector& inv_std = cache.inv_std[i];
                g.params[param_index_[i]] = grad.cwiseProduct(xhat).rowwise().sum();
                g.params[param_index_[i] + 1] = grad.rowwise().sum();
                const Matrix dxhat = grad.array().colwise() * gamma.array();
                if (cache.mode == Mode::train) {
                    const T n = static_cast<T>(grad.cols());
                    const Vector sum_dxhat = dxhat.rowwise().sum();
                    const Vector sum_dxhat_xhat = dxhat.cwiseProduct(xhat).rowwise().sum();
                    Matrix t = (dxhat * n).colwise() - sum_dxhat;
                    t -= (xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
                    prev = t.array().colwise() * (inv_std.array() / n);
                } else {
                    prev = dxhat.array().colwise() * inv_std.array();
                }
                break;
            }
            case LayerKind::leaky_relu: {
                const T slope = static_cast<T>(l.param);
                prev = grad.binaryExpr(in, [slope](T gv, T v) { return v > T(0) ? gv : slope * gv; });
                break;
            }
            case LayerKind::sigmoid:
                prev = grad.binaryExpr(in, [](T gv, T v) {
                    const T s = T(1) / (T(1) + std::exp(-v));
                    return gv * s * (T(1) - s);
                });
                break;
            case LayerKind::dropout:
                prev = grad.cwiseProduct(cache.aux[i]);
                break;
            case LayerKind::quantize:
                prev = grad;  // straight-through
                break;
        }
        if (shortcut_ && i == shortcut_->from_layer) prev += shortcut_grad;
        grad = std::move(prev);
    }
    g.input = std::move(grad);
    return g;
}

template <typename T>
Network<T> Network<T>::without_quantize() const {
    std::vector<LayerSpec> kept;
    std::vector<int> new_index(layers_.size(), -1);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].kind == LayerKind::quantize) continue;
        new_index[i] = static_cast<int>(kept.size());
        kept.push_back(layers_[i]);
    }
    std::optional<Shortcut> sc;
    if (shortcut_) {
        // A removed endpoint moves to the neighbouring kept layer that plays the same role.
        int from = shortcut_->from_layer;
        while (from < static_cast<int>(layers_.size()) && new_index[from] < 0) ++from;
        int to = shortcut_->to_layer;
        while (to >= 0 && new_index[to] < 0) --to;
        if (from < static_cast<int>(layers_.size()) && to >= 0 && new_index[from] <= new_index[to])
            sc = Shortcut{new_index[from], new_index[to]};
    }
    Network out(std::move(kept), sc);
    out.params_ = params_;
    out.running_mean_ = running_mean_;
    out.running_var_ = running_var_;
    return out;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

template <typename T>
void adam_step(Network<T>& model, const std::vector<typename Network<T>::Matrix>& grads,
               AdamState<T>& state, const TrainConfig& cfg) {
    auto& params = model.params();
    if (grads.size() != params.size()) throw ConfigError("gradient count does not match parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Network<T>::Matrix::Zero(p.rows(), p.cols()));
            state.v.push_back(Network<T>::Matrix::Zero(p.rows(), p.cols()));
        }
    }
    if (state.m.size() != params.size()) throw ConfigError("Adam state does not match parameters");
    ++state.step;
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step)));
    const T lr = static_cast<T>(cfg.learning_rate);
    const T eps = static_cast<T>(cfg.adam_eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
        params[i].array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + eps);
    }
}

template <typename T>
LossResult<T> loss_cqinet(const typename Network<T>::Matrix& pred,
                          const typename Network<T>::Matrix& target, double alpha) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ConfigError("loss: prediction and target shapes differ");
    LossResult<T> r;
    const auto n = static_cast<double>(pred.size());
    r.grad.resize(pred.rows(), pred.cols());
    double sq = 0.0, over = 0.0;
    const T w1 = static_cast<T>((1.0 - alpha) * 2.0 / n);
    const T w2 = static_cast<T>(alpha / n);
    for (Eigen::Index c = 0; c < pred.cols(); ++c)
        for (Eigen::Index row = 0; row < pred.rows(); ++row) {
            const T d = pred(row, c) - target(row, c);
            sq += static_cast<double>(d) * static_cast<double>(d);
            if (d > T(0)) over += static_cast<double>(d);
            r.grad(row, c) = w1 * d + (d > T(0) ? w2 : T(0));
        }
    r.mse = n > 0 ? sq / n : 0.0;
    r.overestimate = n > 0 ? over / n : 0.0;
    r.loss = (1.0 - alpha) * r.mse + alpha * r.overestimate;
    return r;
}

GradCheckReport gradient_check(const NetworkD& model, const LossFn& loss, const Eigen::MatrixXd& sample,
                               double tolerance, std::size_t max_checks, std::uint64_t seed, double step) {
    GradCheckReport report;
    NetworkD net = model.without_quantize();
    if (net.parameter_count() == 0 || max_checks == 0) return report;

    auto evaluate = [&](NetworkD::Cache* cache) {
        Rng masks(seed);
        const auto out = net.forward_const(sample, Mode::train, &masks, cache);
        return std::pair{loss(out).first, out};
    };

    NetworkD::Cache cache;
    const auto [base_loss, out] = evaluate(&cache);
    const auto grads = net.backward(cache, loss(out).second);

    // Enumerate every (block, row, col) and sample without replacement.
    std::vector<std::tuple<std::size_t, Eigen::Index, Eigen::Index>> coords;
    for (std::size_t b = 0; b < net.params().size(); ++b)
        for (Eigen::Index c = 0; c < net.params()[b].cols(); ++c)
            for (Eigen::Index r = 0; r < net.params()[b].rows(); ++r) coords.emplace_back(b, r, c);
    Rng pick(mix_seed(seed, 0x67726164ULL));
    pick.shuffle(coords.begin(), coords.end());
    if (coords.size() > max_checks) coords.resize(max_checks);

    // A leaky-ReLU input changing sign between the two probes means the difference
    // straddles a kink, where the central difference is not a derivative estimate.
    auto crosses_kink = [&](const NetworkD::Cache& a, const NetworkD::Cache& b) {
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            if (net.layers()[i].kind != LayerKind::leaky_relu) continue;
            if (((a.inputs[i].array() > 0.0) != (b.inputs[i].array() > 0.0)).any()) return true;
        }
        return false;
    };

    for (const auto& [b, r, c] : coords) {
        double& p = net.params()[b](r, c);
        const double orig = p;
        NetworkD::Cache up_cache, down_cache;
        p = orig + step;
        const double up = evaluate(&up_cache).first;
        p = orig - step;
        const double down = evaluate(&down_cache).first;
        p = orig;
        if (crosses_kink(up_cache, down_cache)) {
            ++report.skipped;
            continue;
        }
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads.params[b](r, c);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        report.max_relative_error = std::max(report.max_relative_error, std::abs(numeric - analytic) / denom);
        ++report.checked;
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

namespace {

constexpr std::uint16_t kModelVersion = 1;

}  // namespace

void write_model(std::ostream& out, const NetworkF& model) {
    binio::write_magic(out, "CQNN");
    binio::write<std::uint16_t>(out, kModelVersion);
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers().size()));
    for (const auto& l : model.layers()) {
        binio::write<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
        binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.in_dim));
        binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.out_dim));
        binio::write<double>(out, l.param);
    }
    const auto& sc = model.shortcut();
    binio::write<std::uint8_t>(out, sc ? 1 : 0);
    binio::write<std::int32_t>(out, sc ? sc->from_layer : -1);
    binio::write<std::int32_t>(out, sc ? sc->to_layer : -1);

    auto write_block = [&](const auto& m) {
        // Row-major element order.
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) binio::write<float>(out, m(r, c));
    };
    std::size_t bn = 0, p = 0;
    for (const auto& l : model.layers()) {
        if (l.kind == LayerKind::dense) {
            write_block(model.params()[p++]);
            write_block(model.params()[p++]);
        } else if (l.kind == LayerKind::batchnorm) {
            write_block(model.params()[p++]);
            write_block(model.params()[p++]);
            write_block(model.running_mean()[bn]);
            write_block(model.running_var()[bn]);
            ++bn;
        }
    }
    if (!out) throw FormatError("failed writing model");
}

NetworkF read_model(std::istream& in) {
    binio::expect_magic(in, "CQNN");
    if (const auto version = binio::read<std::uint16_t>(in); version != kModelVersion)
        throw FormatError("unsupported model version " + std::to_string(version));
    const auto count = binio::read<std::uint32_t>(in);
    if (count > 4096) throw FormatError("implausible layer count");
    std::vector<LayerSpec> layers;
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerSpec l;
        const auto kind = binio::read<std::uint8_t>(in);
        if (kind > static_cast<std::uint8_t>(LayerKind::quantize)) throw FormatError("unknown layer kind");
        l.kind = static_cast<LayerKind>(kind);
        l.in_dim = static_cast<int>(binio::read<std::uint32_t>(in));
        l.out_dim = static_cast<int>(binio::read<std::uint32_t>(in));
        l.param = binio::read<double>(in);
        layers.push_back(l);
    }
    const bool has_sc = binio::read<std::uint8_t>(in) != 0;
    const auto from = binio::read<std::int32_t>(in);
    const auto to = binio::read<std::int32_t>(in);
    std::optional<Shortcut> sc;
    if (has_sc) sc = Shortcut{from, to};

    NetworkF model;
    try {
        model = NetworkF(std::move(layers), sc);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid model structure: ") + e.what());
    }
    auto read_block = [&](auto& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = binio::read<float>(in);
    };
    std::size_t bn = 0, p = 0;
    for (const auto& l : model.layers()) {
        if (l.kind == LayerKind::dense) {
            read_block(model.params()[p++]);
            read_block(model.params()[p++]);
        } else if (l.kind == LayerKind::batchnorm) {
            read_block(model.params()[p++]);
            read_block(model.params()[p++]);
            read_block(model.running_mean()[bn]);
            read_block(model.running_var()[bn]);
            if ((model.running_var()[bn].array() <= 0.0f).any())
                throw FormatError("batchnorm running variance must be positive");
            ++bn;
        }
    }
    return model;
}

void save_model(const std::filesystem::path& path, const NetworkF& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFileError("cannot write " + path.string());
    write_model(out, model);
}

NetworkF load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open model " + path.string());
    return read_model(in);
}

template class Network<float>;
template class Network<double>;
template void adam_step<float>(Network<float>&, const std::vector<Network<float>::Matrix>&,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(Network<double>&, const std::vector<Network<double>::Matrix>&,
                                AdamState<double>&, const TrainConfig&);
template LossResult<float> loss_cqinet<float>(const Network<float>::Matrix&, const Network<float>::Matrix&,
                                              double);
template LossResult<double> loss_cqinet<double>(const Network<double>::Matrix&,
                                                const Network<double>::Matrix&, double);

}  // namespace cqifb::nn
