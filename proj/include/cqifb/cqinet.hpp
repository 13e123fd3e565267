#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cqifb/link_adaptation.hpp"
#include "cqifb/nn.hpp"

namespace cqifb::cqinet {

/// Layer widths of the CQI autoencoder. The encoder maps the input through
/// d1, d2 to the d3-wide codeword; the decoder widens through d4, d5, d6 to d7.
struct CqinetArch {
    int d1 = 300;
    int d2 = 100;
    int d3 = 15;
    int d4 = 100;
    int d5 = 300;
    int d6 = 624;
    int d7 = 624;
    int b1 = 2;  // codeword bits per value
    int b2 = 4;  // output quantizer bits
    int c1 = link::kCqiBits;

    int codeword_bits() const { return d3 * b1; }
    void validate() const;
};

/// Quantized encoder output: d3 values on the 2^b1 midpoint grid.
struct Codeword {
    std::vector<double> values;
    int bits_per_value = 2;

    std::size_t bit_length() const { return values.size() * static_cast<std::size_t>(bits_per_value); }
    /// Level indices packed MSB-first, zero-padded to a whole byte.
    std::vector<std::uint8_t> pack() const;
    static Codeword unpack(std::span<const std::uint8_t> bytes, int d3, int b1);
};

/// (k + 0.5) / 2^c1
double normalize(int k, int c1 = link::kCqiBits);
/// Quantize to b2 bits, then v * 2^c1 - 0.5, clamped to the CQI range.
int denormalize(double v, int c1 = link::kCqiBits, int b2 = 4);

struct Autoencoder {
    CqinetArch arch;
    nn::NetworkF encoder;
    nn::NetworkF decoder;
    bool trained = false;
};

nn::NetworkF build_encoder(int input_width, const CqinetArch& arch, double dropout_rate);
/// The final dense layer carries an identity shortcut from its input to its output.
nn::NetworkF build_decoder(const CqinetArch& arch, double dropout_rate);
/// Encoder over the d7-wide CQI vector plus decoder; weights uninitialised.
Autoencoder build(const CqinetArch& arch, double dropout_rate = 0.03);

/// Network inputs (one column per sample) and CQI-valued targets.
struct TrainingSet {
    nn::NetworkF::Matrix inputs;
    nn::NetworkF::Matrix targets;

    Eigen::Index size() const { return inputs.cols(); }
};

/// Stacks normalized CQI vectors into a training set that reconstructs its own input.
TrainingSet make_cqi_set(std::span<const link::CqiVector> samples, int c1 = link::kCqiBits);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mse = 0.0;
    friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainResult {
    Autoencoder model;
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Minimises the asymmetric CQI loss on denormalized outputs; returns the
/// checkpoint with the lowest validation loss.
TrainResult train_autoencoder(const TrainingSet& train, const TrainingSet& val, const CqinetArch& arch,
                              const nn::TrainConfig& tcfg, const EpochCallback& on_epoch = {});

TrainResult train(std::span<const link::CqiVector> train_set, std::span<const link::CqiVector> val_set,
                  const CqinetArch& arch, const nn::TrainConfig& tcfg, const EpochCallback& on_epoch = {});

/// Eval-mode decoder output mapped back to integer CQI, one vector per input column.
std::vector<link::CqiVector> reconstruct(const Autoencoder& model, const nn::NetworkF::Matrix& inputs);

struct Inference {
    Codeword codeword;
    link::CqiVector cqi;
};

Inference infer(const link::CqiVector& k, const Autoencoder& model);

}  // namespace cqifb::cqinet
