#include "cqifb/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cqifb/errors.hpp"
#include "cqifb/rng.hpp"

namespace cqifb::channel {

namespace {

// Calibration draws live in their own sample-seed range so they never
// coincide with dataset samples.
constexpr std::uint64_t kCalibrationSeedBase = std::uint64_t{1} << 62;

}  // namespace

void SimConfig::validate() const {
    if (n_tx < 1 || n_rx < 1) throw ConfigError("antenna counts must be >= 1");
    if (n_subbands < 1 || n_subcarriers < 1 || n_subcarriers % n_subbands != 0)
        throw ConfigError("n_subcarriers must be a positive multiple of n_subbands");
    if (!(delay_spread_s > 0.0)) throw ConfigError("delay_spread_s must be > 0");
    if (!(subcarrier_spacing_hz > 0.0)) throw ConfigError("subcarrier_spacing_hz must be > 0");
    if (!(noise_var > 0.0)) throw ConfigError("noise_var must be > 0");
    if (pmi_bits < 0 || pmi_bits > 16) throw ConfigError("pmi_bits must be in [0, 16]");
}

std::vector<double> TdlProfile::linear_powers() const {
    std::vector<double> p(tap_powers_db.size());
    std::transform(tap_powers_db.begin(), tap_powers_db.end(), p.begin(),
                   [](double db) { return std::pow(10.0, db / 10.0); });
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& x : p) x /= total;
    return p;
}

void TdlProfile::validate() const {
    if (tap_delays_normalized.empty()) throw ConfigError("TDL profile has no taps");
    if (tap_delays_normalized.size() != tap_powers_db.size())
        throw ConfigError("TDL profile delay/power lengths differ");
    for (std::size_t i = 0; i < size(); ++i) {
        if (!(tap_delays_normalized[i] >= 0.0) || !std::isfinite(tap_delays_normalized[i]))
            throw ConfigError("TDL tap delays must be finite and non-negative");
        if (!std::isfinite(tap_powers_db[i])) throw ConfigError("TDL tap power must be finite");
        if (i > 0 && tap_delays_normalized[i] < tap_delays_normalized[i - 1])
            throw ConfigError("TDL tap delays must be sorted ascending");
    }
}

TdlProfile TdlProfile::tdl_c() {
    return parse(
        "0 -4.4\n0.2099 -1.2\n0.2219 -3.5\n0.2329 -5.2\n0.2176 -2.5\n0.6366 0\n"
        "0.6448 -2.2\n0.6560 -3.9\n0.6584 -7.4\n0.7935 -7.1\n0.8213 -10.7\n"
        "0.9336 -11.1\n1.2285 -5.1\n1.3083 -6.8\n2.1704 -8.7\n2.7105 -13.2\n"
        "4.2589 -13.9\n4.6003 -13.9\n5.4902 -15.8\n5.6077 -17.1\n6.3065 -16.0\n"
        "6.6374 -15.7\n7.0427 -21.6\n8.6523 -22.8\n");
}

TdlProfile TdlProfile::parse(const std::string& text) {
    std::vector<std::pair<double, double>> taps;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        double delay = 0.0, power = 0.0;
        if (!(fields >> delay)) continue;  // blank line
        if (!(fields >> power))
            throw ConfigError("TDL profile line " + std::to_string(line_no) + ": expected two fields");
        std::string extra;
        if (fields >> extra)
            throw ConfigError("TDL profile line " + std::to_string(line_no) + ": trailing data");
        taps.emplace_back(delay, power);
    }
    std::stable_sort(taps.begin(), taps.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    TdlProfile profile;
    for (const auto& [d, p] : taps) {
        profile.tap_delays_normalized.push_back(d);
        profile.tap_powers_db.push_back(p);
    }
    profile.validate();
    return profile;
}

TdlProfile TdlProfile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open TDL profile " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

Codebook Codebook::dft(int n_tx, int pmi_bits) {
    Codebook cb;
    cb.pmi_bits = pmi_bits;
    const int count = 1 << pmi_bits;
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_tx));
    cb.vectors.reserve(count);
    for (int m = 0; m < count; ++m) {
        CVector w(n_tx);
        for (int a = 0; a < n_tx; ++a)
            w[a] = std::polar(scale, 2.0 * std::numbers::pi * a * m / count);
        cb.vectors.push_back(std::move(w));
    }
    return cb;
}

ChannelRealization generate_channel(const SimConfig& cfg, const TdlProfile& profile,
                                    std::uint64_t sample_seed) {
    cfg.validate();
    profile.validate();
    Rng rng(mix_seed(cfg.seed, sample_seed));
    const auto powers = profile.linear_powers();
    const std::size_t n_taps = profile.size();

    std::vector<CMatrix> taps;
    taps.reserve(n_taps);
    for (std::size_t l = 0; l < n_taps; ++l) {
        const double sd = std::sqrt(powers[l] / 2.0);
        CMatrix g(cfg.n_rx, cfg.n_tx);
        for (int c = 0; c < cfg.n_tx; ++c)
            for (int r = 0; r < cfg.n_rx; ++r) {
                const double re = rng.normal();
                const double im = rng.normal();
                g(r, c) = Complex(sd * re, sd * im);
            }
        taps.push_back(std::move(g));
    }

    ChannelRealization ch;
    ch.per_subcarrier.reserve(cfg.n_subcarriers);
    for (int n = 0; n < cfg.n_subcarriers; ++n) {
        const double f = n * cfg.subcarrier_spacing_hz;
        CMatrix h = CMatrix::Zero(cfg.n_rx, cfg.n_tx);
        for (std::size_t l = 0; l < n_taps; ++l) {
            const double tau = profile.tap_delays_normalized[l] * cfg.delay_spread_s;
            h += std::polar(1.0, -2.0 * std::numbers::pi * f * tau) * taps[l];
        }
        ch.per_subcarrier.push_back(std::move(h));
    }
    return ch;
}

int subband_index(int n, const SimConfig& cfg) {
    if (n < 1 || n > cfg.n_subcarriers)
        throw ConfigError("subcarrier index " + std::to_string(n) + " out of range");
    return static_cast<int>((static_cast<long long>(n - 1) * cfg.n_subbands) / cfg.n_subcarriers) + 1;
}

std::vector<CVector> select_precoders(const ChannelRealization& ch, const Codebook& cb,
                                      const SimConfig& cfg) {
    if (cb.vectors.empty()) throw ConfigError("empty codebook");
    if (static_cast<int>(ch.per_subcarrier.size()) != cfg.n_subcarriers)
        throw ConfigError("channel length does not match n_subcarriers");
    const int per = cfg.subcarriers_per_subband();
    std::vector<CVector> chosen;
    chosen.reserve(cfg.n_subbands);
    for (int j = 0; j < cfg.n_subbands; ++j) {
        // sum_n |H_n w|^2 = w^H (sum_n H_n^H H_n) w
        CMatrix gram = CMatrix::Zero(cfg.n_tx, cfg.n_tx);
        for (int n = j * per; n < (j + 1) * per; ++n)
            gram.noalias() += ch.per_subcarrier[n].adjoint() * ch.per_subcarrier[n];
        std::size_t best = 0;
        double best_power = -1.0;
        for (std::size_t i = 0; i < cb.vectors.size(); ++i) {
            const double power = cb.vectors[i].dot(gram * cb.vectors[i]).real();
            if (power > best_power) {
                best_power = power;
                best = i;
            }
        }
        chosen.push_back(cb.vectors[best]);
    }
    return chosen;
}

SnrVector compute_snr(const ChannelRealization& ch, std::span<const CVector> precoders,
                      double noise_var, const SimConfig& cfg) {
    if (!(noise_var > 0.0)) throw ConfigError("noise_var must be > 0");
    if (static_cast<int>(precoders.size()) != cfg.n_subbands)
        throw ConfigError("need one precoder per subband");
    if (static_cast<int>(ch.per_subcarrier.size()) != cfg.n_subcarriers)
        throw ConfigError("channel length does not match n_subcarriers");
    SnrVector snr;
    snr.values.resize(cfg.n_subcarriers);
    for (int n = 0; n < cfg.n_subcarriers; ++n) {
        const auto& w = precoders[subband_index(n + 1, cfg) - 1];
        snr.values[n] = (ch.per_subcarrier[n] * w).squaredNorm() / noise_var;
    }
    return snr;
}

double mean_unit_noise_snr(const SimConfig& cfg, const TdlProfile& profile, const Codebook& cb,
                           int realizations) {
    if (realizations < 1) throw ConfigError("need at least one calibration realization");
    double total = 0.0;
    for (int i = 0; i < realizations; ++i) {
        const auto ch = generate_channel(cfg, profile, kCalibrationSeedBase + i);
        const auto snr = compute_snr(ch, select_precoders(ch, cb, cfg), 1.0, cfg);
        total += std::accumulate(snr.values.begin(), snr.values.end(), 0.0) /
                 static_cast<double>(snr.values.size());
    }
    return total / realizations;
}

double calibrate_noise_var(const SimConfig& cfg, const TdlProfile& profile, const Codebook& cb,
                           int realizations) {
    const double mean = mean_unit_noise_snr(cfg, profile, cb, realizations);
    return mean / std::pow(10.0, cfg.avg_snr_db / 10.0);
}

}  // namespace cqifb::channel
