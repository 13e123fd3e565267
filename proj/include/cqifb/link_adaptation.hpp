#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cqifb/channel_sim.hpp"

namespace cqifb::link {

inline constexpr int kCqiBits = 4;
inline constexpr int kNumCqi = 1 << kCqiBits;
inline constexpr double kDefaultBlerTarget = 0.1;
inline constexpr int kSymbolsPerSlot = 14;
inline constexpr double kSlotsPerSecond = 1000.0;

struct McsEntry {
    int cqi_index = 0;
    int modulation_bits = 0;  // 0 marks "out of range"
    int code_rate_x1024 = 0;

    /// Information bits per modulation symbol.
    double spectral_efficiency() const { return modulation_bits * code_rate_x1024 / 1024.0; }
};

struct CqiTable {
    std::array<McsEntry, kNumCqi> entries{};

    const McsEntry& operator[](int k) const { return entries.at(static_cast<std::size_t>(k)); }
    void validate() const;

    /// 4-bit CQI table 1 (QPSK / 16QAM / 64QAM).
    static CqiTable nr_table1();
    /// Lines of "k modulation_bits rate_x1024"; unlisted indices keep table 1 values.
    static CqiTable load(const std::filesystem::path& path);
};

/// Logistic SNR -> BLER waterfall, one curve per CQI index:
///   bler(g, k) = 1 / (1 + exp(slope_k * (g - threshold_k)))   (g in dB)
/// Index 0 carries no data and has BLER 0 by convention.
struct BlerModel {
    std::array<double, kNumCqi> threshold_db{};
    std::array<double, kNumCqi> slope_per_db{};

    void validate() const;

    /// Thresholds at the AWGN capacity inverse plus `margin_db`, common slope.
    static BlerModel from_table(const CqiTable& table, double margin_db = 2.0,
                                double slope_per_db = 2.0);
    /// Lines of "k t_k_db a_k" for k = 1..15.
    static BlerModel load(const std::filesystem::path& path);
};

/// 10 log10(2^eta - 1): SNR at which capacity equals the spectral efficiency of CQI k.
double shannon_threshold_db(const CqiTable& table, int k);

double to_db(double linear);
double from_db(double db);

double bler(double gamma_db, int k, const BlerModel& model);

/// Exponential effective SNR mapping: -beta ln(mean(exp(-snr / beta))).
double eesm(std::span<const double> snrs, double beta);

/// Largest k in 1..15 with bler(gamma_db, k) <= eps_th, or 0.
int select_cqi_for_snr(double gamma_db, const BlerModel& model, double eps_th = kDefaultBlerTarget);

enum class Granularity : std::uint8_t { subcarrier, subband };

struct CqiVector {
    std::vector<int> values;
    Granularity granularity = Granularity::subcarrier;

    void validate(const channel::SimConfig& cfg) const;
};

/// eSNR beta for CQI k: 2^eta_k - 1 (linear).
double eesm_beta(const CqiTable& table, int k);

/// Per-subband CQI through EESM. With `fixed_beta` unset, candidates are scanned from
/// CQI 15 down, each tested with its own beta; the first passing candidate wins.
CqiVector select_subband_cqi(const channel::SnrVector& snrs, const channel::SimConfig& cfg,
                             const BlerModel& model, const CqiTable& table,
                             std::optional<double> fixed_beta = std::nullopt,
                             double eps_th = kDefaultBlerTarget);

CqiVector select_subcarrier_cqi(const channel::SnrVector& snrs, const BlerModel& model,
                                double eps_th = kDefaultBlerTarget);

/// Wideband CQI plus per-subband differential offsets.
struct OffsetReport {
    int wideband_cqi = 0;
    std::vector<int> offsets;
    int c1_bits = kCqiBits;
    int c2_bits = 2;
    /// Variable offset size reports carry a 2-bit width field.
    bool variable_width = false;

    int overhead_bits() const;
};

/// Inclusive offset range for a b-bit field: [-2^(b-1)+1, 2^(b-1)].
std::pair<int, int> offset_range(int bits);

/// Mean of the subband CQIs rounded to nearest, ties toward the lower integer.
int wideband_cqi(std::span<const int> subband);

OffsetReport encode_offsets(const CqiVector& subband, int c1 = kCqiBits, int c2 = 2);
CqiVector decode_offsets(const OffsetReport& report);

/// Minimal uniform offset width b in 1..4 covering every offset; 4 (with clamping) otherwise.
OffsetReport encode_vos(const CqiVector& subband, int c1 = kCqiBits);

/// Expands per-subband CQI to one value per subcarrier.
CqiVector expand_to_subcarriers(const CqiVector& cqi, const channel::SimConfig& cfg);

/// Expected successfully delivered bits per OFDM symbol, BLER evaluated against the
/// true per-subcarrier SNR.
double effective_rate_per_symbol(const CqiVector& cqi, const channel::SnrVector& snrs,
                                 const CqiTable& table, const BlerModel& model,
                                 const channel::SimConfig& cfg);

/// effective_rate_per_symbol scaled to bits per second (14 symbols per 1 ms slot).
double effective_rate(const CqiVector& cqi, const channel::SnrVector& snrs, const CqiTable& table,
                      const BlerModel& model, const channel::SimConfig& cfg);

struct SchemeMetrics {
    double error_high = 0.0;
    double error_low = 0.0;
    double error_sum = 0.0;
    double effective_rate_bps = 0.0;
    std::map<int, double> deviation_histogram;
    double overhead_bits = 0.0;
};

/// Accumulates classification and rate statistics over many samples.
class MetricsAccumulator {
public:
    void add(std::span<const int> truth, std::span<const int> predicted);
    void add_rate(double bps);
    void add_overhead(double bits);
    SchemeMetrics finish() const;

private:
    std::uint64_t high_ = 0;
    std::uint64_t low_ = 0;
    std::uint64_t total_ = 0;
    std::map<int, std::uint64_t> deviations_;
    double rate_sum_ = 0.0;
    std::uint64_t rate_count_ = 0;
    double overhead_sum_ = 0.0;
    std::uint64_t overhead_count_ = 0;
};

/// Error-high / error-low / deviation histogram of predicted against truth.
SchemeMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted);

}  // namespace cqifb::link
