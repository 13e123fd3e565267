// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Runs at the default configuration (config/default.json): 10,000 samples,
// N_c = 624, J = 13, 5 dB average SNR, 60/20/20 split. Training budgets are
// reduced to fit a single desktop core; see the epoch constants below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cqifb/cli.hpp"
#include "cqifb/cqinet.hpp"
#include "cqifb/dataio.hpp"
#include "cqifb/evaluation.hpp"
#include "cqifb/link_adaptation.hpp"
#include "cqifb/nn.hpp"
#include "cqifb/rng.hpp"
#include "cqifb/sr_cqinet.hpp"

using namespace cqifb;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kMainEpochs = 300;
constexpr int kSweepEpochs = 100;
constexpr int kCollapseEpochs = 3;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

struct Bench {
    dataio::GlobalConfig cfg;
    dataio::Dataset ds;
    dataio::Split split;
    double setup_seconds = 0.0;

    const dataio::Pipeline& pipeline() const { return cfg.pipeline; }

    link::SchemeMetrics eval(eval::Scheme s, const dataio::ModelBundle* b = nullptr) const {
        return eval::evaluate(s, ds, split.test, cfg.pipeline, b);
    }
    std::vector<channel::SnrVector> snr(const std::vector<std::size_t>& idx) const {
        return dataio::gather_snr(ds, idx);
    }
    std::vector<link::CqiVector> cqi(const std::vector<std::size_t>& idx) const {
        return dataio::gather_subcarrier_cqi(ds, idx);
    }
};

nn::TrainConfig epochs(nn::TrainConfig t, int n) {
    t.epochs = n;
    return t;
}

dataio::ModelBundle bundle_of(std::string role, cqinet::Autoencoder m, std::optional<sr::InputKind> kind = {},
                              std::optional<sr::CsirsPattern> pattern = {}) {
    dataio::ModelBundle b;
    b.role = std::move(role);
    b.model = std::move(m);
    b.kind = kind;
    b.pattern = std::move(pattern);
    return b;
}

Outcome cqi_selection_oracle(const Bench& b) {
    const auto& m = b.pipeline().bler;
    const double eps = b.pipeline().eps_th;
    Rng rng(101);
    const auto t0 = Clock::now();
    int match = 0;
    for (int i = 0; i < 1000; ++i) {
        const double g = rng.uniform(-20.0, 35.0);
        int brute = 0;
        for (int k = 0; k < link::kNumCqi; ++k)
            if (link::bler(g, k, m) <= eps) brute = k;
        if (link::select_cqi_for_snr(g, m, eps) == brute) ++match;
    }
    const double secs = seconds_since(t0);
    return {match == 1000 && secs < 1.0, fmt("%d/1000 match brute force, %.4f s", match, secs)};
}

Outcome rate_ordering(const Bench& b) {
    const auto t0 = Clock::now();
    const double sc = b.eval(eval::Scheme::subcarrier).effective_rate_bps;
    const double off = b.eval(eval::Scheme::subband_offset).effective_rate_bps;
    const double raw = b.eval(eval::Scheme::subband_raw).effective_rate_bps;
    const double secs = b.setup_seconds + seconds_since(t0);
    const double g_off = sc / off - 1.0, g_raw = sc / raw - 1.0;
    return {g_off >= 0.05 && g_raw >= 0.03 && secs < 120.0,
            fmt("subcarrier %.4g bps; gain over offset %.2f%% (need 5%%), over raw %.2f%% (need 3%%); %.1f s",
                sc, 100 * g_off, 100 * g_raw, secs)};
}

Outcome subband_error_structure(const Bench& b) {
    const auto off = b.eval(eval::Scheme::subband_offset);
    const auto raw = b.eval(eval::Scheme::subband_raw);
    const double frac = off.error_high / off.error_sum;
    return {off.error_sum > raw.error_sum && raw.error_sum > 0.15 && frac > 0.25,
            fmt("offset error_sum %.4f > raw %.4f > 0.15; error_high share %.3f (need > 0.25)", off.error_sum,
                raw.error_sum, frac)};
}

Outcome cqinet_vs_subband(const Bench& b, cqinet::TrainResult& trained) {
    const auto t0 = Clock::now();
    trained = cqinet::train(b.cqi(b.split.train), b.cqi(b.split.val), b.cfg.arch, epochs(b.cfg.train, kMainEpochs));
    const double secs = seconds_since(t0);
    const auto bundle = bundle_of("cqinet", trained.model);
    const auto net = b.eval(eval::Scheme::cqinet, &bundle);
    const auto off = b.eval(eval::Scheme::subband_offset);
    const double err_red = 1.0 - net.error_sum / off.error_sum;
    const double rate_gain = net.effective_rate_bps / off.effective_rate_bps - 1.0;
    return {net.overhead_bits == 30 && err_red >= 0.05 && rate_gain >= 0.02 && secs <= 1800,
            fmt("S=%g bits, %d epochs (best %d) in %.0f s; error_sum %.4f vs %.4f (%.2f%% lower, need 5%%), "
                "rate %+.2f%% (need +2%%)",
                net.overhead_bits, kMainEpochs, trained.best_epoch, secs, net.error_sum, off.error_sum,
                100 * err_red, 100 * rate_gain)};
}

Outcome overhead_monotonicity(const Bench& b) {
    std::vector<double> rates;
    std::string trace;
    for (int d3 : {5, 10, 15, 20, 25, 30, 35, 40}) {
        auto arch = b.cfg.arch;
        arch.d3 = d3;
        const auto r = cqinet::train(b.cqi(b.split.train), b.cqi(b.split.val), arch, epochs(b.cfg.train, kSweepEpochs));
        const auto bundle = bundle_of("cqinet", r.model);
        rates.push_back(b.eval(eval::Scheme::cqinet, &bundle).effective_rate_bps);
        trace += fmt(" S=%d:%.4g", arch.codeword_bits(), rates.back());
    }
    bool ok = true;
    for (std::size_t i = 1; i < rates.size(); ++i) ok = ok && rates[i] >= rates[i - 1] * 0.99;
    return {ok, fmt("%d epochs each;", kSweepEpochs) + trace};
}

Outcome sr_deviation(const Bench& b) {
    const auto pattern = sr::sample_pattern(b.ds.sim.n_subcarriers, 13);
    const auto r = sr::train_sr(b.snr(b.split.train), b.cqi(b.split.train), b.snr(b.split.val), b.cqi(b.split.val),
                                b.cfg.arch, pattern, sr::InputKind::snr, b.pipeline().bler,
                                epochs(b.cfg.train, kMainEpochs), b.pipeline().eps_th);
    const auto bundle = bundle_of("srcqinet", r.model, sr::InputKind::snr, pattern);
    const auto m = b.eval(eval::Scheme::srcqinet, &bundle);
    double p0 = 0.0, far = 0.0;
    for (const auto& [d, p] : m.deviation_histogram) {
        if (d == 0) p0 += p;
        if (std::abs(d) > 1) far += p;
    }
    return {m.overhead_bits == 30 && p0 >= 0.6 && far <= 0.05,
            fmt("n_cg=13 snr, %d epochs: P(dev=0) %.4f (need >= 0.6), P(|dev|>1) %.4f (need <= 0.05)", kMainEpochs,
                p0, far)};
}

Outcome sr_beats_interp(const Bench& b) {
    const auto pattern = sr::sample_pattern(b.ds.sim.n_subcarriers, 8);
    const auto tcfg = epochs(b.cfg.train, kMainEpochs);
    const auto s = sr::train_sr(b.snr(b.split.train), b.cqi(b.split.train), b.snr(b.split.val), b.cqi(b.split.val),
                                b.cfg.arch, pattern, sr::InputKind::snr, b.pipeline().bler, tcfg, b.pipeline().eps_th);
    const auto i = sr::train_interp_baseline(b.snr(b.split.train), b.snr(b.split.val), b.cfg.arch, pattern,
                                             b.pipeline().bler, tcfg, b.pipeline().eps_th);
    const auto sb = bundle_of("srcqinet", s.model, sr::InputKind::snr, pattern);
    const auto ib = bundle_of("interp", i.model, sr::InputKind::cqi, pattern);
    const auto ms = b.eval(eval::Scheme::srcqinet, &sb);
    const auto mi = b.eval(eval::Scheme::interp, &ib);
    return {ms.overhead_bits == 30 && ms.error_sum < mi.error_sum,
            fmt("n_cg=8, %d epochs: SR error_sum %.4f vs interpolation %.4f", kMainEpochs, ms.error_sum,
                mi.error_sum)};
}

Outcome special_case_collapse(const Bench& b) {
    const std::vector<std::size_t> tr(b.split.train.begin(), b.split.train.begin() + 600);
    const std::vector<std::size_t> va(b.split.val.begin(), b.split.val.begin() + 200);
    const auto tcfg = epochs(b.cfg.train, kCollapseEpochs);
    const auto plain = cqinet::train(b.cqi(tr), b.cqi(va), b.cfg.arch, tcfg);
    const auto pattern = sr::sample_pattern(b.ds.sim.n_subcarriers, b.ds.sim.n_subcarriers);
    const auto srr = sr::train_sr(b.snr(tr), b.cqi(tr), b.snr(va), b.cqi(va), b.cfg.arch, pattern, sr::InputKind::cqi,
                                  b.pipeline().bler, tcfg, b.pipeline().eps_th);
    const bool same = plain.log == srr.log && plain.model.encoder.params() == srr.model.encoder.params() &&
                      plain.model.decoder.params() == srr.model.decoder.params();
    return {same && !plain.log.empty(),
            fmt("%zu-epoch logs %s; final val_loss %.17g vs %.17g", plain.log.size(), same ? "identical" : "differ",
                plain.log.back().val_loss, srr.log.back().val_loss)};
}

Outcome gradient_correctness(const Bench& b) {
    const auto t0 = Clock::now();
    auto model = cqinet::build(b.cfg.arch, b.cfg.train.dropout_rate);
    Rng init(7);
    nn::NetworkD enc(model.encoder), dec(model.decoder);
    enc.initialize(init);
    dec.initialize(init);
    Rng data(8);
    Eigen::MatrixXd x(b.cfg.arch.d7, 8), z(b.cfg.arch.d3, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = cqinet::normalize(static_cast<int>(data.below(16)));
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = data.uniform();
    const nn::LossFn loss = [](const Eigen::MatrixXd& out) {
        const Eigen::MatrixXd d = out.array() - 0.4;
        return std::pair{0.5 * d.squaredNorm(), Eigen::MatrixXd(d)};
    };
    const auto re = nn::gradient_check(enc, loss, x, 1e-4, 300, 11);
    const auto rd = nn::gradient_check(dec, loss, z, 1e-4, 300, 12);

    // Straight-through: the quantizer's input gradient equals its output gradient.
    nn::NetworkD q({nn::LayerSpec::quantize(b.cfg.arch.d3, b.cfg.arch.b1)});
    nn::NetworkD::Cache cache;
    q.forward(z, nn::Mode::train, nullptr, &cache);
    Eigen::MatrixXd g(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = data.normal();
    const bool ste = q.backward(cache, g).input == g;
    const double secs = seconds_since(t0);
    return {re.passed && rd.passed && re.checked > 0 && rd.checked > 0 && ste && secs < 60,
            fmt("encoder max rel err %.2e over %zu coords (%zu on a kink skipped), decoder %.2e over %zu (%zu "
                "skipped); STE %s; %.1f s",
                re.max_relative_error, re.checked, re.skipped, rd.max_relative_error, rd.checked, rd.skipped,
                ste ? "exact" : "broken", secs)};
}

Outcome codec_properties(const Bench& b, const cqinet::TrainResult& trained) {
    Rng rng(21);
    const int J = b.ds.sim.n_subbands;
    const auto [lo, hi] = link::offset_range(2);
    int accepted = 0, roundtrip = 0;
    while (accepted < 10000) {
        const int base = static_cast<int>(rng.below(16));
        link::CqiVector v{{}, link::Granularity::subband};
        for (int j = 0; j < J; ++j)
            v.values.push_back(std::clamp(base + static_cast<int>(rng.below(4)) - 1, 0, 15));
        const int wb = link::wideband_cqi(v.values);
        if (!std::all_of(v.values.begin(), v.values.end(), [&](int k) { return k - wb >= lo && k - wb <= hi; }))
            continue;
        ++accepted;
        if (link::decode_offsets(link::encode_offsets(v)).values == v.values) ++roundtrip;
    }

    // Trained encoder outputs on the test split, plus a dense sweep of the quantizer.
    const int levels = 1 << b.cfg.arch.b1;
    const auto codes = trained.model.encoder.predict(cqinet::make_cqi_set(b.cqi(b.split.test)).inputs);
    bool grid = true;
    auto on_grid = [&](double v) {
        const double m = v * levels - 0.5;
        return m == std::round(m) && m >= 0 && m <= levels - 1;
    };
    for (Eigen::Index i = 0; i < codes.size(); ++i) grid = grid && on_grid(codes.data()[i]);
    for (int i = -100; i <= 1100; ++i) grid = grid && on_grid(nn::quantize_value(i / 1000.0, b.cfg.arch.b1));

    int norm_ok = 0;
    for (int k = 0; k < link::kNumCqi; ++k) norm_ok += cqinet::denormalize(cqinet::normalize(k)) == k;

    return {roundtrip == 10000 && grid && norm_ok == 16,
            fmt("offset round trip %d/10000; %lld codeword values on the %d-level grid: %s; norm/denorm %d/16",
                roundtrip, static_cast<long long>(codes.size()), levels, grid ? "yes" : "no", norm_ok)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::stringstream s;
        s << in.rdbuf();
        files[fs::relative(e.path(), dir).string()] = s.str();
    }
    return files;
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / "cqifb_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto config = root / "config.json";
    {
        const auto base = fs::path(CQIFB_SOURCE_DIR) / "data";
        std::ofstream(config) << "{\"sim\": {\"n_samples\": 200, \"calibration_realizations\": 50},\n"
                              << " \"tdl_profile_path\": \"" << (base / "tdl_c.txt").string() << "\",\n"
                              << " \"bler_model_path\": \"" << (base / "bler_logistic.txt").string() << "\",\n"
                              << " \"train\": {\"epochs\": 3}, \"sr\": {\"n_cg\": 13, \"kind\": \"snr\"}}\n";
    }
    auto pipeline = [&](const fs::path& out) {
        const std::string c = config.string(), o = out.string();
        const std::vector<std::vector<std::string>> steps = {
            {"gen-data"},
            {"train-cqinet"},
            {"train-srcqinet"},
            {"train-srcqinet", "--baseline", "interp"},
            {"eval", "--scheme", "subband-offset"},
            {"eval", "--scheme", "subband-vos"},
            {"eval", "--scheme", "subcarrier"},
            {"eval", "--scheme", "cqinet"},
            {"eval", "--scheme", "srcqinet"},
            {"eval", "--scheme", "interp"},
            {"report"}};
        for (const auto& s : steps) {
            std::vector<std::string> args{"cqifb"};
            args.insert(args.end(), s.begin(), s.end());
            args.insert(args.end(), {"--config", c, "--out", o, "--seed", "5"});
            std::ostringstream sink;
            if (cli::run(args, sink, sink) != 0) return false;
        }
        return true;
    };
    const bool ran = pipeline(root / "a") && pipeline(root / "b");
    const auto a = ran ? snapshot(root / "a") : decltype(snapshot(root)){};
    const auto b = ran ? snapshot(root / "b") : decltype(snapshot(root)){};
    fs::remove_all(root);
    return {ran && !a.empty() && a == b,
            ran ? fmt("%zu output files compared, %s", a.size(), a == b ? "byte-identical" : "differ")
                : std::string("pipeline command failed")};
}

}  // namespace

int main() {
    int failures = 0;
    auto line = [&](int n, const char* name, const Outcome& o) {
        std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    };

    Bench b;
    const auto t0 = Clock::now();
    b.cfg = dataio::load_config(fs::path(CQIFB_SOURCE_DIR) / "config" / "default.json");
    dataio::calibrate(b.cfg);
    b.ds = dataio::generate_dataset(b.cfg.pipeline, static_cast<std::size_t>(b.cfg.n_samples), b.cfg.pipeline.sim.seed);
    b.split = dataio::split(b.ds, b.ds.meta.seed);
    b.setup_seconds = seconds_since(t0);
    std::printf("dataset: %zu samples (%zu train / %zu val / %zu test), noise_var %.6g, %.1f s\n", b.ds.samples.size(),
                b.split.train.size(), b.split.val.size(), b.split.test.size(), b.cfg.pipeline.sim.noise_var,
                b.setup_seconds);

    cqinet::TrainResult trained;
    line(1, "cqi selection oracle", cqi_selection_oracle(b));
    line(2, "effective-rate ordering", rate_ordering(b));
    line(3, "subband error structure", subband_error_structure(b));
    line(4, "cqinet vs subband at 30 bits", cqinet_vs_subband(b, trained));
    line(5, "rate vs overhead monotonicity", overhead_monotonicity(b));
    line(6, "sr deviation structure", sr_deviation(b));
    line(7, "sr beats interpolation", sr_beats_interp(b));
    line(8, "special-case collapse", special_case_collapse(b));
    line(9, "gradient correctness", gradient_correctness(b));
    line(10, "codec properties", codec_properties(b, trained));
    line(11, "pipeline determinism", determinism());

    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
