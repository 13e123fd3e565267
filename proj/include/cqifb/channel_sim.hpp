#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cqifb::channel {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

struct SimConfig {
    int n_tx = 32;
    int n_rx = 4;
    int n_subcarriers = 624;
    int n_subbands = 13;
    double subcarrier_spacing_hz = 15e3;
    double delay_spread_s = 300e-9;
    double avg_snr_db = 5.0;
    /// Linear noise power; set by calibrate_noise_var().
    double noise_var = 1.0;
    std::uint64_t seed = 1;
    int pmi_bits = 4;

    int subcarriers_per_subband() const { return n_subcarriers / n_subbands; }
    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Tapped-delay-line power delay profile with delays in units of the delay spread.
struct TdlProfile {
    std::vector<double> tap_delays_normalized;
    std::vector<double> tap_powers_db;

    std::size_t size() const { return tap_delays_normalized.size(); }
    /// Linear powers scaled to sum to one.
    std::vector<double> linear_powers() const;
    void validate() const;

    /// 3GPP TR 38.901 TDL-C, 24 taps.
    static TdlProfile tdl_c();
    /// Parses "delay power_db" lines; '#' starts a comment. Taps are sorted by delay.
    static TdlProfile parse(const std::string& text);
    static TdlProfile load(const std::filesystem::path& path);
};

struct ChannelRealization {
    /// One n_rx x n_tx matrix per subcarrier.
    std::vector<CMatrix> per_subcarrier;
};

struct Codebook {
    std::vector<CVector> vectors;
    int pmi_bits = 0;

    /// 2^pmi_bits unit-norm DFT beams with spatial frequency m / 2^pmi_bits.
    static Codebook dft(int n_tx, int pmi_bits);
};

struct SnrVector {
    std::vector<double> values;
};

ChannelRealization generate_channel(const SimConfig& cfg, const TdlProfile& profile,
                                    std::uint64_t sample_seed);

/// 1-based subband index of 1-based subcarrier n.
int subband_index(int n, const SimConfig& cfg);

/// Per subband, the codebook vector maximising received power (lowest index on ties).
std::vector<CVector> select_precoders(const ChannelRealization& ch, const Codebook& cb,
                                      const SimConfig& cfg);

SnrVector compute_snr(const ChannelRealization& ch, std::span<const CVector> precoders,
                      double noise_var, const SimConfig& cfg);

/// Mean post-precoding SNR over `realizations` channels drawn at unit noise power.
double mean_unit_noise_snr(const SimConfig& cfg, const TdlProfile& profile, const Codebook& cb,
                           int realizations = 1000);

/// Noise variance placing the mean linear SNR at cfg.avg_snr_db.
double calibrate_noise_var(const SimConfig& cfg, const TdlProfile& profile, const Codebook& cb,
                           int realizations = 1000);

}  // namespace cqifb::channel
