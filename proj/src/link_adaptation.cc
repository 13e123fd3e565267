#include "cqifb/link_adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cqifb/errors.hpp"

namespace cqifb::link {

namespace {

void check_cqi_index(int k) {
    if (k < 0 || k >= kNumCqi) throw ConfigError("CQI index " + std::to_string(k) + " out of range");
}

long long ceil_div(long long a, long long b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

std::vector<std::vector<double>> read_numeric_rows(const std::filesystem::path& path,
                                                   std::size_t fields) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::vector<double> row;
        double v = 0.0;
        while (ss >> v) row.push_back(v);
        if (row.empty()) continue;
        if (row.size() != fields || !ss.eof())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(fields) + " numeric fields");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void CqiTable::validate() const {
    if (entries[0].modulation_bits != 0 || entries[0].code_rate_x1024 != 0)
        throw ConfigError("CQI 0 must be out of range");
    for (int k = 1; k < kNumCqi; ++k) {
        const auto& e = entries[k];
        if (e.modulation_bits <= 0 || e.code_rate_x1024 <= 0 || e.code_rate_x1024 > 1024)
            throw ConfigError("CQI " + std::to_string(k) + " has an invalid MCS");
        if (k > 1 && !(e.spectral_efficiency() > entries[k - 1].spectral_efficiency()))
            throw ConfigError("CQI spectral efficiency must increase with index");
    }
}

CqiTable CqiTable::nr_table1() {
    constexpr std::array<std::pair<int, int>, kNumCqi> mcs{{{0, 0},
                                                            {2, 78},
                                                            {2, 120},
                                                            {2, 193},
                                                            {2, 308},
                                                            {2, 449},
                                                            {2, 602},
                                                            {4, 378},
                                                            {4, 490},
                                                            {4, 616},
                                                            {6, 466},
                                                            {6, 567},
                                                            {6, 666},
                                                            {6, 772},
                                                            {6, 873},
                                                            {6, 948}}};
    CqiTable t;
    for (int k = 0; k < kNumCqi; ++k) t.entries[k] = {k, mcs[k].first, mcs[k].second};
    return t;
}

CqiTable CqiTable::load(const std::filesystem::path& path) {
    CqiTable t = nr_table1();
    for (const auto& row : read_numeric_rows(path, 3)) {
        const int k = static_cast<int>(row[0]);
        check_cqi_index(k);
        t.entries[k] = {k, static_cast<int>(row[1]), static_cast<int>(row[2])};
    }
    t.validate();
    return t;
}

void BlerModel::validate() const {
    for (int k = 1; k < kNumCqi; ++k) {
        if (!(slope_per_db[k] > 0.0)) throw ConfigError("BLER slopes must be positive");
        if (!std::isfinite(threshold_db[k])) throw ConfigError("BLER thresholds must be finite");
        if (k > 1 && !(threshold_db[k] > threshold_db[k - 1]))
            throw ConfigError("BLER thresholds must increase with CQI");
    }
}

BlerModel BlerModel::from_table(const CqiTable& table, double margin_db, double slope_per_db) {
    BlerModel m;
    for (int k = 1; k < kNumCqi; ++k) {
        m.threshold_db[k] = shannon_threshold_db(table, k) + margin_db;
        m.slope_per_db[k] = slope_per_db;
    }
    m.validate();
    return m;
}

BlerModel BlerModel::load(const std::filesystem::path& path) {
    BlerModel m;
    std::array<bool, kNumCqi> seen{};
    for (const auto& row : read_numeric_rows(path, 3)) {
        const int k = static_cast<int>(row[0]);
        if (k < 1 || k >= kNumCqi) throw ConfigError("BLER model rows must cover k = 1..15");
        m.threshold_db[k] = row[1];
        m.slope_per_db[k] = row[2];
        seen[k] = true;
    }
    for (int k = 1; k < kNumCqi; ++k)
        if (!seen[k]) throw ConfigError("BLER model missing CQI " + std::to_string(k));
    m.validate();
    return m;
}

double shannon_threshold_db(const CqiTable& table, int k) {
    check_cqi_index(k);
    return to_db(std::exp2(table[k].spectral_efficiency()) - 1.0);
}

double to_db(double linear) { return 10.0 * std::log10(linear); }
double from_db(double db) { return std::pow(10.0, db / 10.0); }

double bler(double gamma_db, int k, const BlerModel& model) {
    check_cqi_index(k);
    if (k == 0) return 0.0;
    return 1.0 / (1.0 + std::exp(model.slope_per_db[k] * (gamma_db - model.threshold_db[k])));
}

double eesm(std::span<const double> snrs, double beta) {
    if (snrs.empty()) throw ConfigError("eesm needs at least one SNR");
    if (!(beta > 0.0)) throw ConfigError("eesm beta must be positive");
    // Shift by the minimum so the largest exponent is exp(0).
    const double lo = *std::min_element(snrs.begin(), snrs.end());
    double acc = 0.0;
    for (double s : snrs) acc += std::exp(-(s - lo) / beta);
    return lo - beta * std::log(acc / static_cast<double>(snrs.size()));
}

int select_cqi_for_snr(double gamma_db, const BlerModel& model, double eps_th) {
    for (int k = kNumCqi - 1; k >= 1; --k)
        if (bler(gamma_db, k, model) <= eps_th) return k;
    return 0;
}

void CqiVector::validate(const channel::SimConfig& cfg) const {
    const auto expected = static_cast<std::size_t>(
        granularity == Granularity::subcarrier ? cfg.n_subcarriers : cfg.n_subbands);
    if (values.size() != expected) throw ConfigError("CQI vector length does not match granularity");
    for (int v : values) check_cqi_index(v);
}

double eesm_beta(const CqiTable& table, int k) {
    check_cqi_index(k);
    return std::exp2(table[k].spectral_efficiency()) - 1.0;
}

CqiVector select_subband_cqi(const channel::SnrVector& snrs, const channel::SimConfig& cfg,
                             const BlerModel& model, const CqiTable& table,
                             std::optional<double> fixed_beta, double eps_th) {
    if (static_cast<int>(snrs.values.size()) != cfg.n_subcarriers)
        throw ConfigError("SNR vector length does not match n_subcarriers");
    const int per = cfg.subcarriers_per_subband();
    CqiVector out{std::vector<int>(cfg.n_subbands, 0), Granularity::subband};
    for (int j = 0; j < cfg.n_subbands; ++j) {
        const std::span<const double> band(snrs.values.data() + j * per, per);
        if (fixed_beta) {
            out.values[j] = select_cqi_for_snr(to_db(eesm(band, *fixed_beta)), model, eps_th);
            continue;
        }
        for (int k = kNumCqi - 1; k >= 1; --k) {
            if (bler(to_db(eesm(band, eesm_beta(table, k))), k, model) <= eps_th) {
                out.values[j] = k;
                break;
            }
        }
    }
    return out;
}

CqiVector select_subcarrier_cqi(const channel::SnrVector& snrs, const BlerModel& model,
                                double eps_th) {
    CqiVector out{std::vector<int>(snrs.values.size()), Granularity::subcarrier};
    std::transform(snrs.values.begin(), snrs.values.end(), out.values.begin(),
                   [&](double s) { return select_cqi_for_snr(to_db(s), model, eps_th); });
    return out;
}

int OffsetReport::overhead_bits() const {
    return c1_bits + c2_bits * static_cast<int>(offsets.size()) + (variable_width ? 2 : 0);
}

std::pair<int, int> offset_range(int bits) {
    if (bits < 1) throw ConfigError("offset width must be >= 1 bit");
    const int half = 1 << (bits - 1);
    return {-half + 1, half};
}

int wideband_cqi(std::span<const int> subband) {
    if (subband.empty()) throw ConfigError("no subband CQIs");
    long long sum = 0;
    for (int v : subband) sum += v;
    const auto j = static_cast<long long>(subband.size());
    return static_cast<int>(ceil_div(2 * sum - j, 2 * j));
}

OffsetReport encode_offsets(const CqiVector& subband, int c1, int c2) {
    if (subband.granularity != Granularity::subband)
        throw ConfigError("offset coding needs per-subband CQI");
    const auto [lo, hi] = offset_range(c2);
    OffsetReport r;
    r.c1_bits = c1;
    r.c2_bits = c2;
    r.wideband_cqi = wideband_cqi(subband.values);
    r.offsets.reserve(subband.values.size());
    for (int v : subband.values) r.offsets.push_back(std::clamp(v - r.wideband_cqi, lo, hi));
    return r;
}

CqiVector decode_offsets(const OffsetReport& report) {
    CqiVector out{{}, Granularity::subband};
    out.values.reserve(report.offsets.size());
    for (int off : report.offsets)
        out.values.push_back(std::clamp(report.wideband_cqi + off, 0, kNumCqi - 1));
    return out;
}

OffsetReport encode_vos(const CqiVector& subband, int c1) {
    if (subband.granularity != Granularity::subband)
        throw ConfigError("offset coding needs per-subband CQI");
    const int wb = wideband_cqi(subband.values);
    const auto [min_it, max_it] = std::minmax_element(subband.values.begin(), subband.values.end());
    const int lo = *min_it - wb;
    const int hi = *max_it - wb;
    int width = 4;
    for (int b = 1; b < 4; ++b) {
        const auto [rlo, rhi] = offset_range(b);
        if (lo >= rlo && hi <= rhi) {
            width = b;
            break;
        }
    }
    OffsetReport r = encode_offsets(subband, c1, width);
    r.variable_width = true;
    return r;
}

CqiVector expand_to_subcarriers(const CqiVector& cqi, const channel::SimConfig& cfg) {
    cqi.validate(cfg);
    if (cqi.granularity == Granularity::subcarrier) return cqi;
    const int per = cfg.subcarriers_per_subband();
    CqiVector out{std::vector<int>(cfg.n_subcarriers), Granularity::subcarrier};
    for (int n = 0; n < cfg.n_subcarriers; ++n) out.values[n] = cqi.values[n / per];
    return out;
}

double effective_rate_per_symbol(const CqiVector& cqi, const channel::SnrVector& snrs,
                                 const CqiTable& table, const BlerModel& model,
                                 const channel::SimConfig& cfg) {
    if (static_cast<int>(snrs.values.size()) != cfg.n_subcarriers)
        throw ConfigError("SNR vector length does not match n_subcarriers");
    const auto per_tone = expand_to_subcarriers(cqi, cfg);
    double bits = 0.0;
    for (int n = 0; n < cfg.n_subcarriers; ++n) {
        const int k = per_tone.values[n];
        if (k == 0) continue;
        bits += table[k].spectral_efficiency() * (1.0 - bler(to_db(snrs.values[n]), k, model));
    }
    return bits;
}

double effective_rate(const CqiVector& cqi, const channel::SnrVector& snrs, const CqiTable& table,
                      const BlerModel& model, const channel::SimConfig& cfg) {
    return effective_rate_per_symbol(cqi, snrs, table, model, cfg) * kSymbolsPerSlot *
           kSlotsPerSecond;
}

void MetricsAccumulator::add(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw ConfigError("truth/prediction length mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int d = predicted[i] - truth[i];
        high_ += d > 0;
        low_ += d < 0;
        ++deviations_[d];
    }
    total_ += truth.size();
}

void MetricsAccumulator::add_rate(double bps) {
    rate_sum_ += bps;
    ++rate_count_;
}

void MetricsAccumulator::add_overhead(double bits) {
    overhead_sum_ += bits;
    ++overhead_count_;
}

SchemeMetrics MetricsAccumulator::finish() const {
    SchemeMetrics m;
    if (total_ > 0) {
        const auto n = static_cast<double>(total_);
        m.error_high = static_cast<double>(high_) / n;
        m.error_low = static_cast<double>(low_) / n;
        m.error_sum = m.error_high + m.error_low;
        for (const auto& [d, c] : deviations_) m.deviation_histogram[d] = static_cast<double>(c) / n;
    }
    if (rate_count_ > 0) m.effective_rate_bps = rate_sum_ / static_cast<double>(rate_count_);
    if (overhead_count_ > 0) m.overhead_bits = overhead_sum_ / static_cast<double>(overhead_count_);
    return m;
}

SchemeMetrics classification_metrics(std::span<const int> truth, std::span<const int> predicted) {
    MetricsAccumulator acc;
    acc.add(truth, predicted);
    return acc.finish();
}

}  // namespace cqifb::link
