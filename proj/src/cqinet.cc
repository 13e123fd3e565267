#include "cqifb/cqinet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cqifb/errors.hpp"
#include "cqifb/rng.hpp"

namespace cqifb::cqinet {

namespace {

using Matrix = nn::NetworkF::Matrix;

// Sub-streams of the training seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

Matrix gather_columns(const Matrix& m, std::span<const Eigen::Index> cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
    return out;
}

/// Network output in (0, 1) -> continuous CQI estimate, v * 2^c1 - 0.5.
Matrix to_cqi_units(const Matrix& v, int c1) {
    const float scale = std::ldexp(1.0f, c1);
    return (v.array() * scale - 0.5f).matrix();
}

double evaluate_loss(const Autoencoder& m, const TrainingSet& set, double alpha, double* mse) {
    constexpr Eigen::Index kChunk = 500;
    double loss = 0.0, sq = 0.0;
    for (Eigen::Index start = 0; start < set.size(); start += kChunk) {
        const auto n = std::min(kChunk, set.size() - start);
        const Matrix out = m.decoder.predict(m.encoder.predict(set.inputs.middleCols(start, n)));
        const Matrix target = set.targets.middleCols(start, n);
        const auto r = nn::loss_cqinet<float>(to_cqi_units(out, m.arch.c1), target, alpha);
        loss += r.loss * static_cast<double>(n);
        sq += r.mse * static_cast<double>(n);
    }
    const auto total = static_cast<double>(set.size());
    if (mse) *mse = sq / total;
    return loss / total;
}

}  // namespace

void CqinetArch::validate() const {
    for (int d : {d1, d2, d3, d4, d5, d6, d7})
        if (d < 1) throw ConfigError("autoencoder widths must be positive");
    if (d6 != d7) throw ConfigError("d6 must equal d7 for the decoder shortcut");
    if (b1 < 1 || b1 > 16) throw ConfigError("b1 must be in [1, 16]");
    if (c1 < 1 || c1 > 8) throw ConfigError("c1 must be in [1, 8]");
    if (b2 < c1) throw ConfigError("b2 must be >= c1 to represent every CQI level");
}

std::vector<std::uint8_t> Codeword::pack() const {
    std::vector<std::uint8_t> bytes((bit_length() + 7) / 8, 0);
    const double levels = std::ldexp(1.0, bits_per_value);
    std::size_t bit = 0;
    for (double v : values) {
        const auto level = static_cast<unsigned>(std::lround(v * levels - 0.5));
        for (int b = bits_per_value - 1; b >= 0; --b, ++bit)
            if ((level >> b) & 1u) bytes[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    }
    return bytes;
}

Codeword Codeword::unpack(std::span<const std::uint8_t> bytes, int d3, int b1) {
    if (bytes.size() * 8 < static_cast<std::size_t>(d3) * static_cast<std::size_t>(b1))
        throw FormatError("codeword too short");
    Codeword cw;
    cw.bits_per_value = b1;
    const double levels = std::ldexp(1.0, b1);
    std::size_t bit = 0;
    for (int i = 0; i < d3; ++i) {
        unsigned level = 0;
        for (int b = 0; b < b1; ++b, ++bit) level = (level << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
        cw.values.push_back((level + 0.5) / levels);
    }
    return cw;
}

double normalize(int k, int c1) {
    if (k < 0 || k >= (1 << c1)) throw ConfigError("CQI " + std::to_string(k) + " out of range");
    return (k + 0.5) / std::ldexp(1.0, c1);
}

int denormalize(double v, int c1, int b2) {
    if (!std::isfinite(v)) throw ConfigError("cannot denormalize a non-finite value");
    const double q = nn::quantize_value(v, b2);
    const auto k = static_cast<int>(std::lround(q * std::ldexp(1.0, c1) - 0.5));
    return std::clamp(k, 0, (1 << c1) - 1);
}

nn::NetworkF build_encoder(int input_width, const CqinetArch& arch, double dropout_rate) {
    arch.validate();
    using nn::LayerSpec;
    return nn::NetworkF({
        LayerSpec::dense(input_width, arch.d1),
        LayerSpec::batchnorm(arch.d1),
        LayerSpec::leaky_relu(arch.d1),
        LayerSpec::dropout(arch.d1, dropout_rate),
        LayerSpec::dense(arch.d1, arch.d2),
        LayerSpec::batchnorm(arch.d2),
        LayerSpec::leaky_relu(arch.d2),
        LayerSpec::dropout(arch.d2, dropout_rate),
        LayerSpec::dense(arch.d2, arch.d3),
        LayerSpec::batchnorm(arch.d3),
        LayerSpec::sigmoid(arch.d3),
        LayerSpec::quantize(arch.d3, arch.b1),
    });
}

nn::NetworkF build_decoder(const CqinetArch& arch, double dropout_rate) {
    arch.validate();
    using nn::LayerSpec;
    std::vector<LayerSpec> layers{
        LayerSpec::dense(arch.d3, arch.d4),
        LayerSpec::batchnorm(arch.d4),
        LayerSpec::leaky_relu(arch.d4),
        LayerSpec::dropout(arch.d4, dropout_rate),
        LayerSpec::dense(arch.d4, arch.d5),
        LayerSpec::batchnorm(arch.d5),
        LayerSpec::leaky_relu(arch.d5),
        LayerSpec::dropout(arch.d5, dropout_rate),
        LayerSpec::dense(arch.d5, arch.d6),
        LayerSpec::batchnorm(arch.d6),
        LayerSpec::leaky_relu(arch.d6),
        LayerSpec::dropout(arch.d6, dropout_rate),
        LayerSpec::dense(arch.d6, arch.d7),
        LayerSpec::sigmoid(arch.d7),
    };
    const int last_dense = static_cast<int>(layers.size()) - 2;
    return nn::NetworkF(std::move(layers), nn::Shortcut{last_dense, last_dense});
}

Autoencoder build(const CqinetArch& arch, double dropout_rate) {
    return {arch, build_encoder(arch.d7, arch, dropout_rate), build_decoder(arch, dropout_rate), false};
}

TrainingSet make_cqi_set(std::span<const link::CqiVector> samples, int c1) {
    if (samples.empty()) throw ConfigError("empty CQI sample set");
    const auto width = static_cast<Eigen::Index>(samples.front().values.size());
    TrainingSet set{Matrix(width, static_cast<Eigen::Index>(samples.size())),
                    Matrix(width, static_cast<Eigen::Index>(samples.size()))};
    for (std::size_t s = 0; s < samples.size(); ++s) {
        if (static_cast<Eigen::Index>(samples[s].values.size()) != width)
            throw ConfigError("CQI samples have different lengths");
        for (Eigen::Index n = 0; n < width; ++n) {
            const int k = samples[s].values[n];
            set.inputs(n, static_cast<Eigen::Index>(s)) = static_cast<float>(normalize(k, c1));
            set.targets(n, static_cast<Eigen::Index>(s)) = static_cast<float>(k);
        }
    }
    return set;
}

TrainResult train_autoencoder(const TrainingSet& train, const TrainingSet& val, const CqinetArch& arch,
                              const nn::TrainConfig& tcfg, const EpochCallback& on_epoch) {
    tcfg.validate();
    arch.validate();
    if (train.size() == 0 || val.size() == 0) throw ConfigError("empty training or validation set");
    if (train.targets.rows() != arch.d7 || val.targets.rows() != arch.d7)
        throw ConfigError("target width does not match d7");
    if (val.inputs.rows() != train.inputs.rows()) throw ConfigError("train/validation input widths differ");

    Autoencoder model{arch, build_encoder(static_cast<int>(train.inputs.rows()), arch, tcfg.dropout_rate),
                      build_decoder(arch, tcfg.dropout_rate), false};
    Rng init(mix_seed(tcfg.seed, kInitStream));
    model.encoder.initialize(init);
    model.decoder.initialize(init);

    Rng shuffle(mix_seed(tcfg.seed, kShuffleStream));
    Rng dropout(mix_seed(tcfg.seed, kDropoutStream));
    nn::AdamState<float> enc_state, dec_state;
    const float out_scale = std::ldexp(1.0f, arch.c1);

    TrainResult result;
    result.model = model;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        shuffle.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
            const auto count = std::min(order.size() - start, static_cast<std::size_t>(tcfg.batch_size));
            const std::span<const Eigen::Index> idx(order.data() + start, count);
            const Matrix x = gather_columns(train.inputs, idx);
            const Matrix target = gather_columns(train.targets, idx);

            nn::NetworkF::Cache enc_cache, dec_cache;
            const Matrix code = model.encoder.forward(x, nn::Mode::train, &dropout, &enc_cache);
            const Matrix out = model.decoder.forward(code, nn::Mode::train, &dropout, &dec_cache);
            auto loss = nn::loss_cqinet<float>(to_cqi_units(out, arch.c1), target, tcfg.alpha);
            loss_sum += loss.loss * static_cast<double>(count);

            const auto dec_grads = model.decoder.backward(dec_cache, loss.grad * out_scale);
            const auto enc_grads = model.encoder.backward(enc_cache, dec_grads.input);
            nn::adam_step(model.decoder, dec_grads.params, dec_state, tcfg);
            nn::adam_step(model.encoder, enc_grads.params, enc_state, tcfg);
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(order.size());
        entry.val_loss = evaluate_loss(model, val, tcfg.alpha, &entry.val_mse);
        result.log.push_back(entry);
        if (entry.val_loss < best) {
            best = entry.val_loss;
            result.model = model;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(entry);
    }
    result.model.trained = true;
    return result;
}

TrainResult train(std::span<const link::CqiVector> train_set, std::span<const link::CqiVector> val_set,
                  const CqinetArch& arch, const nn::TrainConfig& tcfg, const EpochCallback& on_epoch) {
    if (train_set.empty() || val_set.empty()) throw ConfigError("empty dataset");
    return train_autoencoder(make_cqi_set(train_set, arch.c1), make_cqi_set(val_set, arch.c1), arch, tcfg,
                             on_epoch);
}

std::vector<link::CqiVector> reconstruct(const Autoencoder& model, const Matrix& inputs) {
    if (!model.trained) throw ConfigError("model is not trained");
    constexpr Eigen::Index kChunk = 500;
    std::vector<link::CqiVector> out;
    out.reserve(static_cast<std::size_t>(inputs.cols()));
    for (Eigen::Index start = 0; start < inputs.cols(); start += kChunk) {
        const auto n = std::min(kChunk, inputs.cols() - start);
        const Matrix v = model.decoder.predict(model.encoder.predict(inputs.middleCols(start, n)));
        for (Eigen::Index c = 0; c < n; ++c) {
            link::CqiVector k{std::vector<int>(static_cast<std::size_t>(v.rows())),
                              link::Granularity::subcarrier};
            for (Eigen::Index r = 0; r < v.rows(); ++r)
                k.values[static_cast<std::size_t>(r)] = denormalize(v(r, c), model.arch.c1, model.arch.b2);
            out.push_back(std::move(k));
        }
    }
    return out;
}

Inference infer(const link::CqiVector& k, const Autoencoder& model) {
    if (!model.trained) throw ConfigError("model is not trained");
    if (static_cast<int>(k.values.size()) != model.encoder.input_dim())
        throw ConfigError("CQI vector length does not match the encoder input");
    Matrix x(static_cast<Eigen::Index>(k.values.size()), 1);
    for (std::size_t n = 0; n < k.values.size(); ++n)
        x(static_cast<Eigen::Index>(n), 0) = static_cast<float>(normalize(k.values[n], model.arch.c1));
    const Matrix code = model.encoder.predict(x);
    const Matrix v = model.decoder.predict(code);

    Inference r;
    r.codeword.bits_per_value = model.arch.b1;
    for (Eigen::Index i = 0; i < code.rows(); ++i) r.codeword.values.push_back(code(i, 0));
    r.cqi.granularity = link::Granularity::subcarrier;
    for (Eigen::Index i = 0; i < v.rows(); ++i) r.cqi.values.push_back(denormalize(v(i, 0), model.arch.c1, model.arch.b2));
    return r;
}

}  // namespace cqifb::cqinet
