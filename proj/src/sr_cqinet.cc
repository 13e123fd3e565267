#include "cqifb/sr_cqinet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cqifb/errors.hpp"

namespace cqifb::sr {

using Matrix = nn::NetworkF::Matrix;

std::string to_string(InputKind kind) { return kind == InputKind::cqi ? "cqi" : "snr"; }

InputKind parse_input_kind(const std::string& s) {
    if (s == "cqi") return InputKind::cqi;
    if (s == "snr") return InputKind::snr;
    throw ConfigError("unknown input kind '" + s + "' (expected cqi or snr)");
}

void CsirsPattern::validate(int n_c) const {
    if (positions.empty()) throw ConfigError("pilot pattern is empty");
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] < 1 || positions[i] > n_c) throw ConfigError("pilot position out of range");
        if (i > 0 && positions[i] <= positions[i - 1])
            throw ConfigError("pilot positions must be strictly increasing");
    }
}

CsirsPattern CsirsPattern::load(const std::filesystem::path& path, int n_c) {
    std::ifstream in(path);
    if (!in) throw MissingFileError("cannot open pilot pattern " + path.string());
    CsirsPattern p;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        int v = 0;
        if (ss >> v) p.positions.push_back(v);
    }
    p.validate(n_c);
    return p;
}

CsirsPattern sample_pattern(int n_c, int n_cg) {
    if (n_cg < 2 || n_cg > n_c) throw ConfigError("n_cg must be in [2, n_c]");
    CsirsPattern p;
    const double step = static_cast<double>(n_c - 1) / (n_cg - 1);
    for (int i = 0; i < n_cg; ++i) {
        const int pos = static_cast<int>(std::lround(1.0 + i * step));
        if (p.positions.empty() || pos != p.positions.back()) p.positions.push_back(pos);
    }
    p.validate(n_c);
    return p;
}

CoarseInput make_coarse_input(const channel::SnrVector& snrs, const CsirsPattern& pattern, InputKind kind,
                              const link::BlerModel& model, double eps_th, int c1) {
    pattern.validate(static_cast<int>(snrs.values.size()));
    CoarseInput in;
    in.kind = kind;
    in.values.reserve(pattern.positions.size());
    if (kind == InputKind::snr) {
        double peak = 0.0;
        for (int pos : pattern.positions) peak = std::max(peak, snrs.values[pos - 1]);
        if (!(peak > 0.0)) throw ConfigError("pilot SNRs are all zero; cannot normalize");
        for (int pos : pattern.positions) in.values.push_back(snrs.values[pos - 1] / peak);
    } else {
        for (int pos : pattern.positions)
            in.values.push_back(
                cqinet::normalize(link::select_cqi_for_snr(link::to_db(snrs.values[pos - 1]), model, eps_th), c1));
    }
    return in;
}

cqinet::Autoencoder build_sr(const cqinet::CqinetArch& arch, int n_cg, double dropout_rate) {
    if (n_cg < 1) throw ConfigError("n_cg must be positive");
    return {arch, cqinet::build_encoder(n_cg, arch, dropout_rate), cqinet::build_decoder(arch, dropout_rate), false};
}

Matrix coarse_matrix(std::span<const channel::SnrVector> snrs, const CsirsPattern& pattern, InputKind kind,
                     const link::BlerModel& model, double eps_th, int c1) {
    Matrix m(pattern.n_cg(), static_cast<Eigen::Index>(snrs.size()));
    for (std::size_t s = 0; s < snrs.size(); ++s) {
        const auto in = make_coarse_input(snrs[s], pattern, kind, model, eps_th, c1);
        for (std::size_t i = 0; i < in.values.size(); ++i)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = static_cast<float>(in.values[i]);
    }
    return m;
}

namespace {

Matrix cqi_targets(std::span<const link::CqiVector> truth) {
    if (truth.empty()) throw ConfigError("empty dataset");
    Matrix m(static_cast<Eigen::Index>(truth.front().values.size()), static_cast<Eigen::Index>(truth.size()));
    for (std::size_t s = 0; s < truth.size(); ++s) {
        if (static_cast<Eigen::Index>(truth[s].values.size()) != m.rows())
            throw ConfigError("truth vectors have different lengths");
        for (Eigen::Index n = 0; n < m.rows(); ++n)
            m(n, static_cast<Eigen::Index>(s)) = static_cast<float>(truth[s].values[static_cast<std::size_t>(n)]);
    }
    return m;
}

Matrix pilot_cqi_targets(std::span<const channel::SnrVector> snrs, const CsirsPattern& pattern,
                         const link::BlerModel& model, double eps_th) {
    Matrix m(pattern.n_cg(), static_cast<Eigen::Index>(snrs.size()));
    for (std::size_t s = 0; s < snrs.size(); ++s)
        for (int i = 0; i < pattern.n_cg(); ++i)
            m(i, static_cast<Eigen::Index>(s)) = static_cast<float>(link::select_cqi_for_snr(
                link::to_db(snrs[s].values[pattern.positions[i] - 1]), model, eps_th));
    return m;
}

}  // namespace

cqinet::TrainResult train_sr(std::span<const channel::SnrVector> train_snr,
                             std::span<const link::CqiVector> train_truth,
                             std::span<const channel::SnrVector> val_snr, std::span<const link::CqiVector> val_truth,
                             const cqinet::CqinetArch& arch, const CsirsPattern& pattern, InputKind kind,
                             const link::BlerModel& model, const nn::TrainConfig& tcfg, double eps_th,
                             const cqinet::EpochCallback& on_epoch) {
    if (train_snr.empty() || val_snr.empty()) throw ConfigError("empty dataset");
    if (train_snr.size() != train_truth.size() || val_snr.size() != val_truth.size())
        throw ConfigError("SNR and truth sets differ in size");
    const cqinet::TrainingSet train{coarse_matrix(train_snr, pattern, kind, model, eps_th, arch.c1),
                                    cqi_targets(train_truth)};
    const cqinet::TrainingSet val{coarse_matrix(val_snr, pattern, kind, model, eps_th, arch.c1),
                                  cqi_targets(val_truth)};
    return cqinet::train_autoencoder(train, val, arch, tcfg, on_epoch);
}

std::vector<link::CqiVector> infer_sr(const cqinet::Autoencoder& model, std::span<const channel::SnrVector> snrs,
                                      const CsirsPattern& pattern, InputKind kind,
                                      const link::BlerModel& bler_model, double eps_th) {
    if (model.encoder.input_dim() != pattern.n_cg()) throw ConfigError("model input width does not match n_cg");
    return cqinet::reconstruct(model, coarse_matrix(snrs, pattern, kind, bler_model, eps_th, model.arch.c1));
}

cqinet::CqinetArch interp_arch(const cqinet::CqinetArch& arch, int n_cg) {
    auto a = arch;
    a.d6 = n_cg;
    a.d7 = n_cg;
    return a;
}

cqinet::TrainResult train_interp_baseline(std::span<const channel::SnrVector> train_snr,
                                          std::span<const channel::SnrVector> val_snr,
                                          const cqinet::CqinetArch& arch, const CsirsPattern& pattern,
                                          const link::BlerModel& model, const nn::TrainConfig& tcfg, double eps_th,
                                          const cqinet::EpochCallback& on_epoch) {
    if (train_snr.empty() || val_snr.empty()) throw ConfigError("empty dataset");
    const auto a = interp_arch(arch, pattern.n_cg());
    const cqinet::TrainingSet train{coarse_matrix(train_snr, pattern, InputKind::cqi, model, eps_th, a.c1),
                                    pilot_cqi_targets(train_snr, pattern, model, eps_th)};
    const cqinet::TrainingSet val{coarse_matrix(val_snr, pattern, InputKind::cqi, model, eps_th, a.c1),
                                  pilot_cqi_targets(val_snr, pattern, model, eps_th)};
    return cqinet::train_autoencoder(train, val, a, tcfg, on_epoch);
}

link::CqiVector interp_baseline(std::span<const int> coarse_cqi, const CsirsPattern& pattern, int n_c) {
    pattern.validate(n_c);
    if (static_cast<int>(coarse_cqi.size()) != pattern.n_cg()) throw ConfigError("coarse CQI length != n_cg");
    const auto& pos = pattern.positions;
    link::CqiVector out{std::vector<int>(static_cast<std::size_t>(n_c)), link::Granularity::subcarrier};
    std::size_t seg = 0;
    for (int n = 1; n <= n_c; ++n) {
        double v = 0.0;
        if (pos.size() == 1 || n <= pos.front()) {
            v = coarse_cqi.front();
        } else if (n >= pos.back()) {
            v = coarse_cqi.back();
        } else {
            while (pos[seg + 1] < n) ++seg;
            const double t = static_cast<double>(n - pos[seg]) / (pos[seg + 1] - pos[seg]);
            v = coarse_cqi[seg] + t * (coarse_cqi[seg + 1] - coarse_cqi[seg]);
        }
        const int rounded = static_cast<int>(std::ceil(v - 0.5));  // half rounds down
        out.values[static_cast<std::size_t>(n - 1)] = std::clamp(rounded, 0, link::kNumCqi - 1);
    }
    return out;
}

std::vector<link::CqiVector> infer_interp(const cqinet::Autoencoder& coarse_model,
                                          std::span<const channel::SnrVector> snrs, const CsirsPattern& pattern,
                                          const link::BlerModel& bler_model, int n_c, double eps_th) {
    const auto coarse = infer_sr(coarse_model, snrs, pattern, InputKind::cqi, bler_model, eps_th);
    std::vector<link::CqiVector> out;
    out.reserve(coarse.size());
    for (const auto& c : coarse) out.push_back(interp_baseline(c.values, pattern, n_c));
    return out;
}

}  // namespace cqifb::sr
