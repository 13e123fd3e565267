#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cqifb/rng.hpp"

/// Minimal dense-network engine: layers, batch norm, dropout, a uniform quantizer
/// with straight-through gradients, Adam, and the asymmetric CQI loss.
///
/// Batches are column-major: one sample per column, features along rows.
namespace cqifb::nn {

enum class LayerKind : std::uint8_t {
    dense = 0,
    batchnorm = 1,
    leaky_relu = 2,
    sigmoid = 3,
    dropout = 4,
    quantize = 5,
};

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int in_dim = 0;
    int out_dim = 0;
    /// dropout: rate; quantize: bit width; leaky_relu: negative slope.
    double param = 0.0;

    static LayerSpec dense(int in, int out) { return {LayerKind::dense, in, out, 0.0}; }
    static LayerSpec batchnorm(int dim) { return {LayerKind::batchnorm, dim, dim, 0.0}; }
    static LayerSpec leaky_relu(int dim, double slope = 0.01) {
        return {LayerKind::leaky_relu, dim, dim, slope};
    }
    static LayerSpec sigmoid(int dim) { return {LayerKind::sigmoid, dim, dim, 0.0}; }
    static LayerSpec dropout(int dim, double rate) { return {LayerKind::dropout, dim, dim, rate}; }
    static LayerSpec quantize(int dim, int bits) {
        return {LayerKind::quantize, dim, dim, static_cast<double>(bits)};
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The input of layer `from_layer` is added to the output of layer `to_layer`.
struct Shortcut {
    int from_layer = 0;
    int to_layer = 0;
    friend bool operator==(const Shortcut&, const Shortcut&) = default;
};

enum class Mode { train, eval };

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

/// Uniform quantizer onto the 2^bits midpoints (m + 0.5) / 2^bits, m = 0..2^bits-1.
double quantize_value(double x, int bits);

template <typename T>
class Network {
public:
    using Scalar = T;
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    struct Cache {
        Mode mode = Mode::eval;
        std::vector<Matrix> inputs;
        /// dropout: scaled mask; batchnorm: normalized input.
        std::vector<Matrix> aux;
        std::vector<Vector> inv_std;
    };

    struct Gradients {
        std::vector<Matrix> params;
        Matrix input;
    };

    Network() = default;
    /// Validates the layer chain; parameters are zero until initialize() or load.
    explicit Network(std::vector<LayerSpec> layers, std::optional<Shortcut> shortcut = std::nullopt);

    template <typename U>
    explicit Network(const Network<U>& other);

    /// Dense weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); BN scale 1, shift 0.
    void initialize(Rng& rng);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::optional<Shortcut>& shortcut() const { return shortcut_; }
    int input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
    int output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }

    /// Trainable blocks in declaration order: dense W, b; batchnorm gamma, beta.
    std::vector<Matrix>& params() { return params_; }
    const std::vector<Matrix>& params() const { return params_; }
    std::vector<Vector>& running_mean() { return running_mean_; }
    const std::vector<Vector>& running_mean() const { return running_mean_; }
    std::vector<Vector>& running_var() { return running_var_; }
    const std::vector<Vector>& running_var() const { return running_var_; }

    std::size_t parameter_count() const;

    /// Train mode uses batch statistics, active dropout (masks drawn from `rng`),
    /// and updates the running statistics.
    Matrix forward(const Matrix& x, Mode mode, Rng* rng = nullptr, Cache* cache = nullptr);
    /// Eval-mode forward; never mutates the model.
    Matrix predict(const Matrix& x) const;
    /// Forward without updating running statistics.
    Matrix forward_const(const Matrix& x, Mode mode, Rng* rng, Cache* cache) const;

    /// Reverse-mode gradients; the quantizer passes gradients straight through.
    Gradients backward(const Cache& cache, const Matrix& grad_out) const;

    /// Copy with every quantize layer removed (and the shortcut re-indexed).
    Network without_quantize() const;

private:
    template <typename U>
    friend class Network;

    Matrix run(const Matrix& x, Mode mode, Rng* rng, Cache* cache,
               std::vector<std::pair<Vector, Vector>>* batch_stats) const;

    std::vector<LayerSpec> layers_;
    std::optional<Shortcut> shortcut_;
    std::vector<Matrix> params_;
    std::vector<Vector> running_mean_;
    std::vector<Vector> running_var_;
    /// Per layer: first params_ index (dense/batchnorm) and running-stat index (batchnorm), else -1.
    std::vector<int> param_index_;
    std::vector<int> bn_index_;
};

template <typename T>
template <typename U>
Network<T>::Network(const Network<U>& other)
    : layers_(other.layers_),
      shortcut_(other.shortcut_),
      param_index_(other.param_index_),
      bn_index_(other.bn_index_) {
    for (const auto& p : other.params_) params_.push_back(p.template cast<T>());
    for (const auto& v : other.running_mean_) running_mean_.push_back(v.template cast<T>());
    for (const auto& v : other.running_var_) running_var_.push_back(v.template cast<T>());
}

using NetworkF = Network<float>;
using NetworkD = Network<double>;

struct TrainConfig {
    double learning_rate = 0.001;
    int epochs = 1000;
    int batch_size = 100;
    double alpha = 0.05;
    double dropout_rate = 0.03;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    void validate() const;
};

template <typename T>
struct AdamState {
    std::vector<typename Network<T>::Matrix> m;
    std::vector<typename Network<T>::Matrix> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update; lazily sizes `state` on first use.
template <typename T>
void adam_step(Network<T>& model, const std::vector<typename Network<T>::Matrix>& grads,
               AdamState<T>& state, const TrainConfig& cfg);

template <typename T>
struct LossResult {
    double loss = 0.0;
    double mse = 0.0;          // L1 term
    double overestimate = 0.0; // L2 term
    typename Network<T>::Matrix grad;
};

/// (1 - alpha) * mean((pred - target)^2) + alpha * mean(max(pred - target, 0)).
template <typename T>
LossResult<T> loss_cqinet(const typename Network<T>::Matrix& pred,
                          const typename Network<T>::Matrix& target, double alpha);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose probes straddle a leaky-ReLU kink.
    std::size_t skipped = 0;
    bool passed = true;
};

/// Returns the loss and its gradient with respect to the network output.
using LossFn = std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

/// Central finite differences over up to `max_checks` random parameter coordinates of
/// the quantize-free part of `model`, in train mode with fixed dropout masks.
/// Coordinates whose +/- probes land on different sides of a leaky-ReLU kink are skipped.
GradCheckReport gradient_check(const NetworkD& model, const LossFn& loss, const Eigen::MatrixXd& sample,
                               double tolerance, std::size_t max_checks, std::uint64_t seed,
                               double step = 1e-5);

/// Little-endian model file: "CQNN", u16 version, layer records, shortcut, f32 blocks.
void write_model(std::ostream& out, const NetworkF& model);
NetworkF read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const NetworkF& model);
NetworkF load_model(const std::filesystem::path& path);

}  // namespace cqifb::nn
