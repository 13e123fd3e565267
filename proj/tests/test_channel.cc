#include <cmath>
#include <complex>
#include <numbers>

#include "doctest.h"

#include "cqifb/channel_sim.hpp"
#include "cqifb/errors.hpp"

using namespace cqifb;
using namespace cqifb::channel;

namespace {

SimConfig small_cfg() {
    SimConfig cfg;
    cfg.n_tx = 4;
    cfg.n_rx = 2;
    cfg.n_subcarriers = 48;
    cfg.n_subbands = 4;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    SimConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.n_subbands = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.delay_spread_s = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.n_rx = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("tdl-c profile") {
    const auto p = TdlProfile::tdl_c();
    CHECK(p.size() == 24);
    double sum = 0.0;
    for (double w : p.linear_powers()) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < p.size(); ++i)
        CHECK(p.tap_delays_normalized[i] >= p.tap_delays_normalized[i - 1]);
    CHECK(p.tap_delays_normalized.back() == doctest::Approx(8.6523));
}

TEST_CASE("profile parsing") {
    const auto p = TdlProfile::parse("# comment\n1.0 -3\n\n0 0  # first\n");
    REQUIRE(p.size() == 2);
    CHECK(p.tap_delays_normalized[0] == 0.0);
    CHECK(p.tap_powers_db[1] == -3.0);
    CHECK_THROWS_AS(TdlProfile::parse("0\n"), ConfigError);
    CHECK_THROWS_AS(TdlProfile::parse("0 0 0\n"), ConfigError);
    CHECK_THROWS_AS(TdlProfile::parse("-1 0\n"), ConfigError);
    CHECK_THROWS_AS(TdlProfile::parse(""), ConfigError);
    CHECK_THROWS_AS(TdlProfile::load("/nonexistent/profile.txt"), MissingFileError);
}

TEST_CASE("single zero-delay tap gives a flat channel") {
    const auto cfg = small_cfg();
    const auto ch = generate_channel(cfg, TdlProfile::parse("0 0\n"), 3);
    REQUIRE(ch.per_subcarrier.size() == 48);
    for (const auto& h : ch.per_subcarrier) CHECK((h - ch.per_subcarrier[0]).norm() == 0.0);
}

TEST_CASE("channel generation is deterministic") {
    const auto cfg = small_cfg();
    const auto a = generate_channel(cfg, TdlProfile::tdl_c(), 7);
    const auto b = generate_channel(cfg, TdlProfile::tdl_c(), 7);
    const auto c = generate_channel(cfg, TdlProfile::tdl_c(), 8);
    bool same = true, differs = false;
    for (std::size_t n = 0; n < a.per_subcarrier.size(); ++n) {
        same = same && (a.per_subcarrier[n] == b.per_subcarrier[n]);
        differs = differs || (a.per_subcarrier[n] != c.per_subcarrier[n]);
        CHECK(a.per_subcarrier[n].rows() == 2);
        CHECK(a.per_subcarrier[n].cols() == 4);
    }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("two equal taps one symbol apart trace one cosine period") {
    SimConfig cfg;
    cfg.n_tx = 1;
    cfg.n_rx = 1;
    cfg.n_subcarriers = 64;
    cfg.n_subbands = 1;
    const double tau = 1.0 / (cfg.n_subcarriers * cfg.subcarrier_spacing_hz);
    const auto profile = TdlProfile::parse("0 0\n" + std::to_string(tau / cfg.delay_spread_s) + " 0\n");
    const auto ch = generate_channel(cfg, profile, 11);
    // |H_n|^2 = A + B cos(2 pi (n-1)/N + phi): only DFT bins 0 and +-1 carry energy.
    const int N = cfg.n_subcarriers;
    std::vector<double> p(N);
    for (int n = 0; n < N; ++n) p[n] = std::norm(ch.per_subcarrier[n](0, 0));
    double fundamental = 0.0, rest = 0.0;
    for (int k = 1; k < N; ++k) {
        std::complex<double> acc = 0.0;
        for (int n = 0; n < N; ++n) acc += p[n] * std::polar(1.0, -2.0 * std::numbers::pi * k * n / N);
        (k == 1 || k == N - 1 ? fundamental : rest) += std::norm(acc);
    }
    CHECK(fundamental > 0.0);
    CHECK(rest < 1e-12 * fundamental);
}

TEST_CASE("subband index") {
    SimConfig cfg;
    CHECK(subband_index(1, cfg) == 1);
    CHECK(subband_index(48, cfg) == 1);
    CHECK(subband_index(49, cfg) == 2);
    CHECK(subband_index(624, cfg) == 13);
}

TEST_CASE("dft codebook") {
    const auto cb = Codebook::dft(32, 4);
    CHECK(cb.vectors.size() == 16);
    for (const auto& w : cb.vectors) CHECK(w.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(Codebook::dft(8, 0).vectors.size() == 1);
}

TEST_CASE("precoder selection") {
    SimConfig cfg;
    cfg.n_tx = 2;
    cfg.n_rx = 1;
    cfg.n_subcarriers = 2;
    cfg.n_subbands = 1;
    Codebook cb;
    cb.vectors = {CVector::Unit(2, 0), CVector::Unit(2, 1)};
    cb.pmi_bits = 1;
    ChannelRealization ch;
    CMatrix h(1, 2);
    h << 3.0, 1.0;
    ch.per_subcarrier = {h, h};
    auto w = select_precoders(ch, cb, cfg);
    REQUIRE(w.size() == 1);
    CHECK(w[0] == cb.vectors[0]);

    SUBCASE("single-entry codebook") {
        Codebook one;
        one.vectors = {cb.vectors[1]};
        CHECK(select_precoders(ch, one, cfg)[0] == cb.vectors[1]);
    }
    SUBCASE("flat channel picks one vector everywhere") {
        auto c = small_cfg();
        const auto flat = generate_channel(c, TdlProfile::parse("0 0\n"), 5);
        const auto sel = select_precoders(flat, Codebook::dft(c.n_tx, 3), c);
        for (const auto& v : sel) CHECK(v == sel[0]);
    }
}

TEST_CASE("snr computation") {
    SimConfig cfg;
    cfg.n_tx = 1;
    cfg.n_rx = 1;
    cfg.n_subcarriers = 2;
    cfg.n_subbands = 1;
    ChannelRealization ch;
    CMatrix h(1, 1);
    h << 2.0;
    ch.per_subcarrier = {h, CMatrix::Zero(1, 1)};
    const std::vector<CVector> w{CVector::Ones(1)};
    const auto snr = compute_snr(ch, w, 1.0, cfg);
    CHECK(snr.values[0] == doctest::Approx(4.0));
    CHECK(snr.values[1] == 0.0);
}

TEST_CASE("snr matches element-wise recomputation") {
    SimConfig cfg;
    cfg.n_subcarriers = 26;
    cfg.n_subbands = 13;
    const auto ch = generate_channel(cfg, TdlProfile::tdl_c(), 2);
    const auto cb = Codebook::dft(cfg.n_tx, cfg.pmi_bits);
    const auto w = select_precoders(ch, cb, cfg);
    const double sigma2 = 0.7;
    const auto snr = compute_snr(ch, w, sigma2, cfg);
    for (int n = 0; n < cfg.n_subcarriers; ++n) {
        const auto& H = ch.per_subcarrier[n];
        const auto& v = w[subband_index(n + 1, cfg) - 1];
        double power = 0.0;
        for (int r = 0; r < cfg.n_rx; ++r) {
            std::complex<double> acc = 0.0;
            for (int t = 0; t < cfg.n_tx; ++t) acc += H(r, t) * v(t);
            power += std::norm(acc);
        }
        CHECK(snr.values[n] == doctest::Approx(power / sigma2).epsilon(1e-12));
    }
}

TEST_CASE("noise calibration hits the target mean snr") {
    SimConfig cfg;
    cfg.n_subcarriers = 52;
    cfg.n_subbands = 13;
    const auto profile = TdlProfile::tdl_c();
    const auto cb = Codebook::dft(cfg.n_tx, cfg.pmi_bits);
    cfg.noise_var = calibrate_noise_var(cfg, profile, cb, 200);
    // Same calibration draws at the chosen noise: mean linear SNR equals the target.
    const double mean = mean_unit_noise_snr(cfg, profile, cb, 200) / cfg.noise_var;
    CHECK(10.0 * std::log10(mean) == doctest::Approx(cfg.avg_snr_db).epsilon(1e-9));
}
