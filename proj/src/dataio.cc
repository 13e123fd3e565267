#include "cqifb/dataio.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cqifb/binary_io.hpp"
#include "cqifb/errors.hpp"
#include "cqifb/rng.hpp"

namespace cqifb::dataio {

using nlohmann::json;

namespace {

constexpr std::uint16_t kDatasetVersion = 1;

/// Accumulates a byte stream for hashing.
class Hasher {
public:
    template <typename T>
    Hasher& add(T v) {
        std::ostringstream s;
        binio::write(s, v);
        const auto str = s.str();
        h_ = fnv1a(str, h_);
        return *this;
    }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

void write_sim(std::ostream& out, const channel::SimConfig& s) {
    binio::write<std::int32_t>(out, s.n_tx);
    binio::write<std::int32_t>(out, s.n_rx);
    binio::write<std::int32_t>(out, s.n_subcarriers);
    binio::write<std::int32_t>(out, s.n_subbands);
    binio::write<std::int32_t>(out, s.pmi_bits);
    binio::write<double>(out, s.subcarrier_spacing_hz);
    binio::write<double>(out, s.delay_spread_s);
    binio::write<double>(out, s.avg_snr_db);
    binio::write<double>(out, s.noise_var);
    binio::write<std::uint64_t>(out, s.seed);
}

channel::SimConfig read_sim(std::istream& in) {
    channel::SimConfig s;
    s.n_tx = binio::read<std::int32_t>(in);
    s.n_rx = binio::read<std::int32_t>(in);
    s.n_subcarriers = binio::read<std::int32_t>(in);
    s.n_subbands = binio::read<std::int32_t>(in);
    s.pmi_bits = binio::read<std::int32_t>(in);
    s.subcarrier_spacing_hz = binio::read<double>(in);
    s.delay_spread_s = binio::read<double>(in);
    s.avg_snr_db = binio::read<double>(in);
    s.noise_var = binio::read<double>(in);
    s.seed = binio::read<std::uint64_t>(in);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("dataset header: ") + e.what());
    }
    return s;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

json arch_to_json(const cqinet::CqinetArch& a) {
    return {{"d1", a.d1}, {"d2", a.d2}, {"d3", a.d3}, {"d4", a.d4}, {"d5", a.d5},
            {"d6", a.d6}, {"d7", a.d7}, {"b1", a.b1}, {"b2", a.b2}, {"c1", a.c1}};
}

cqinet::CqinetArch arch_from_json(const json& j) {
    cqinet::CqinetArch a;
    take(j, "d1", a.d1);
    take(j, "d2", a.d2);
    take(j, "d3", a.d3);
    take(j, "d4", a.d4);
    take(j, "d5", a.d5);
    take(j, "d6", a.d6);
    take(j, "d7", a.d7);
    take(j, "b1", a.b1);
    take(j, "b2", a.b2);
    take(j, "c1", a.c1);
    return a;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
    return v;
}

template <typename I>
I parse_int(const std::string& s) {
    I v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'");
    return v;
}

}  // namespace

std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h) {
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::uint64_t Pipeline::config_hash() const {
    Hasher h;
    h.add(sim.n_tx).add(sim.n_rx).add(sim.n_subcarriers).add(sim.n_subbands).add(sim.pmi_bits);
    h.add(sim.subcarrier_spacing_hz).add(sim.delay_spread_s).add(sim.avg_snr_db).add(sim.noise_var);
    for (std::size_t i = 0; i < profile.size(); ++i)
        h.add(profile.tap_delays_normalized[i]).add(profile.tap_powers_db[i]);
    for (const auto& e : table.entries) h.add(e.modulation_bits).add(e.code_rate_x1024);
    for (int k = 0; k < link::kNumCqi; ++k) h.add(bler.threshold_db[k]).add(bler.slope_per_db[k]);
    h.add(eps_th);
    return h.value();
}

Pipeline make_pipeline(const channel::SimConfig& sim) {
    Pipeline p;
    p.sim = sim;
    p.codebook = channel::Codebook::dft(sim.n_tx, sim.pmi_bits);
    return p;
}

GlobalConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    GlobalConfig cfg;
    try {
        auto& sim = cfg.pipeline.sim;
        if (j.contains("sim")) {
            const auto& s = j.at("sim");
            take(s, "n_tx", sim.n_tx);
            take(s, "n_rx", sim.n_rx);
            take(s, "n_subcarriers", sim.n_subcarriers);
            take(s, "n_subbands", sim.n_subbands);
            take(s, "subcarrier_spacing_hz", sim.subcarrier_spacing_hz);
            take(s, "delay_spread_s", sim.delay_spread_s);
            take(s, "avg_snr_db", sim.avg_snr_db);
            take(s, "seed", sim.seed);
            take(s, "pmi_bits", sim.pmi_bits);
            take(s, "n_samples", cfg.n_samples);
            take(s, "bler_target", cfg.pipeline.eps_th);
            take(s, "calibration_realizations", cfg.calibration_realizations);
            if (s.contains("noise_var") && !s.at("noise_var").is_null()) {
                sim.noise_var = s.at("noise_var").get<double>();
                cfg.noise_var_fixed = true;
            }
        }
        if (j.contains("tdl_profile_path") && !j.at("tdl_profile_path").is_null())
            cfg.pipeline.profile =
                channel::TdlProfile::load(resolve(base_dir, j.at("tdl_profile_path").get<std::string>()));
        if (j.contains("cqi_table_path") && !j.at("cqi_table_path").is_null())
            cfg.pipeline.table = link::CqiTable::load(resolve(base_dir, j.at("cqi_table_path").get<std::string>()));
        if (j.contains("bler_model_path") && !j.at("bler_model_path").is_null())
            cfg.pipeline.bler = link::BlerModel::load(resolve(base_dir, j.at("bler_model_path").get<std::string>()));
        else
            cfg.pipeline.bler = link::BlerModel::from_table(cfg.pipeline.table);

        if (j.contains("train")) {
            const auto& t = j.at("train");
            auto& tc = cfg.train;
            take(t, "learning_rate", tc.learning_rate);
            take(t, "epochs", tc.epochs);
            take(t, "batch_size", tc.batch_size);
            take(t, "alpha", tc.alpha);
            take(t, "dropout_rate", tc.dropout_rate);
            take(t, "adam_beta1", tc.adam_beta1);
            take(t, "adam_beta2", tc.adam_beta2);
            take(t, "adam_eps", tc.adam_eps);
            take(t, "seed", tc.seed);
        }
        cfg.arch.d6 = cfg.arch.d7 = sim.n_subcarriers;
        if (j.contains("arch")) {
            const auto a = arch_from_json(j.at("arch"));
            cfg.arch = a;
            if (!j.at("arch").contains("d6")) cfg.arch.d6 = sim.n_subcarriers;
            if (!j.at("arch").contains("d7")) cfg.arch.d7 = sim.n_subcarriers;
        }
        if (j.contains("sr")) {
            const auto& s = j.at("sr");
            take(s, "n_cg", cfg.sr.n_cg);
            if (s.contains("kind")) cfg.sr.kind = sr::parse_input_kind(s.at("kind").get<std::string>());
            if (s.contains("pattern_path") && !s.at("pattern_path").is_null())
                cfg.sr.pattern_path = resolve(base_dir, s.at("pattern_path").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field has the wrong type: ") + e.what());
    }
    cfg.pipeline.sim.validate();
    cfg.pipeline.table.validate();
    cfg.pipeline.bler.validate();
    cfg.train.validate();
    cfg.arch.validate();
    if (cfg.arch.d7 != cfg.pipeline.sim.n_subcarriers) throw ConfigError("arch.d7 must equal sim.n_subcarriers");
    if (!(cfg.pipeline.eps_th > 0.0 && cfg.pipeline.eps_th < 1.0)) throw ConfigError("bler_target must be in (0, 1)");
    if (cfg.n_samples < 1) throw ConfigError("n_samples must be >= 1");
    cfg.pipeline.codebook = channel::Codebook::dft(cfg.pipeline.sim.n_tx, cfg.pipeline.sim.pmi_bits);
    return cfg;
}

GlobalConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path), path.parent_path());
}

void calibrate(GlobalConfig& cfg) {
    if (cfg.noise_var_fixed) return;
    auto& p = cfg.pipeline;
    p.sim.noise_var = channel::calibrate_noise_var(p.sim, p.profile, p.codebook, cfg.calibration_realizations);
}

Sample generate_sample(const Pipeline& p, std::uint64_t index) {
    if (p.codebook.vectors.empty()) throw ConfigError("pipeline has no codebook");
    const auto ch = channel::generate_channel(p.sim, p.profile, index);
    auto snr = channel::compute_snr(ch, channel::select_precoders(ch, p.codebook, p.sim), p.sim.noise_var, p.sim);
    // Stored precision; CQI is derived from the stored values so it can be regenerated from the file.
    for (auto& v : snr.values) v = static_cast<double>(static_cast<float>(v));
    Sample s;
    s.subcarrier_cqi = link::select_subcarrier_cqi(snr, p.bler, p.eps_th);
    s.subband_cqi = link::select_subband_cqi(snr, p.sim, p.bler, p.table, std::nullopt, p.eps_th);
    s.snr = std::move(snr);
    return s;
}

Dataset generate_dataset(Pipeline p, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    p.sim.seed = seed;
    p.sim.validate();
    Dataset ds;
    ds.sim = p.sim;
    ds.meta = {p.config_hash(), seed, count};
    ds.samples.reserve(count);
    for (std::size_t i = 1; i <= count; ++i) ds.samples.push_back(generate_sample(p, i));
    return ds;
}

Split split(std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(order.begin(), order.end());
    const std::size_t n_val = count / 5;
    const std::size_t n_test = count / 5;
    const std::size_t n_train = count - n_val - n_test;
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

std::vector<channel::SnrVector> gather_snr(const Dataset& ds, std::span<const std::size_t> idx) {
    std::vector<channel::SnrVector> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.samples.at(i).snr);
    return out;
}

std::vector<link::CqiVector> gather_subcarrier_cqi(const Dataset& ds, std::span<const std::size_t> idx) {
    std::vector<link::CqiVector> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.samples.at(i).subcarrier_cqi);
    return out;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
    binio::write_magic(out, "CQDS");
    binio::write<std::uint16_t>(out, kDatasetVersion);
    write_sim(out, ds.sim);
    binio::write<std::uint64_t>(out, ds.meta.config_hash);
    binio::write<std::uint64_t>(out, ds.meta.seed);
    binio::write<std::uint64_t>(out, ds.samples.size());
    const auto nc = static_cast<std::size_t>(ds.sim.n_subcarriers);
    const auto j = static_cast<std::size_t>(ds.sim.n_subbands);
    for (const auto& s : ds.samples) {
        if (s.snr.values.size() != nc || s.subcarrier_cqi.values.size() != nc || s.subband_cqi.values.size() != j)
            throw ConfigError("dataset sample has inconsistent lengths");
        for (double v : s.snr.values) binio::write<float>(out, static_cast<float>(v));
        for (int k : s.subcarrier_cqi.values) binio::write<std::uint8_t>(out, static_cast<std::uint8_t>(k));
        for (int k : s.subband_cqi.values) binio::write<std::uint8_t>(out, static_cast<std::uint8_t>(k));
    }
    if (!out) throw FormatError("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
    binio::expect_magic(in, "CQDS");
    if (const auto v = binio::read<std::uint16_t>(in); v != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(v));
    Dataset ds;
    ds.sim = read_sim(in);
    ds.meta.config_hash = binio::read<std::uint64_t>(in);
    ds.meta.seed = binio::read<std::uint64_t>(in);
    ds.meta.count = binio::read<std::uint64_t>(in);
    const auto nc = static_cast<std::size_t>(ds.sim.n_subcarriers);
    const auto j = static_cast<std::size_t>(ds.sim.n_subbands);
    if (ds.meta.count > (std::uint64_t{1} << 32)) throw FormatError("implausible sample count");
    ds.samples.resize(static_cast<std::size_t>(ds.meta.count));
    auto read_cqi = [&](std::size_t n, link::Granularity g) {
        link::CqiVector c{std::vector<int>(n), g};
        for (auto& k : c.values) {
            k = binio::read<std::uint8_t>(in);
            if (k >= link::kNumCqi) throw FormatError("CQI value out of range");
        }
        return c;
    };
    for (auto& s : ds.samples) {
        s.snr.values.resize(nc);
        for (auto& v : s.snr.values) v = binio::read<float>(in);
        s.subcarrier_cqi = read_cqi(nc, link::Granularity::subcarrier);
        s.subband_cqi = read_cqi(j, link::Granularity::subband);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after dataset");
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ostringstream buf(std::ios::binary);
    write_dataset(buf, ds);
    const auto bytes = buf.str();
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw MissingFileError("cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    const json side{{"format", "CQDS"},
                    {"version", kDatasetVersion},
                    {"count", ds.meta.count},
                    {"seed", ds.meta.seed},
                    {"config_hash", ds.meta.config_hash},
                    {"content_hash", fnv1a(bytes)}};
    std::ofstream out(sidecar_path(path));
    if (!out) throw MissingFileError("cannot write dataset sidecar");
    out << side.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (const auto side_path = sidecar_path(path); std::filesystem::exists(side_path)) {
        json side;
        try {
            side = json::parse(read_file(side_path));
        } catch (const json::exception& e) {
            throw FormatError(std::string("dataset sidecar: ") + e.what());
        }
        if (side.value("content_hash", std::uint64_t{0}) != fnv1a(bytes))
            throw FormatError("dataset content hash does not match its sidecar");
    }
    std::istringstream in(bytes, std::ios::binary);
    return read_dataset(in);
}

void save_bundle(const std::filesystem::path& dir, const ModelBundle& b) {
    std::filesystem::create_directories(dir);
    nn::save_model(dir / "encoder.cqnn", b.model.encoder);
    nn::save_model(dir / "decoder.cqnn", b.model.decoder);
    json side{{"role", b.role},
              {"arch", arch_to_json(b.model.arch)},
              {"seed", b.seed},
              {"best_epoch", b.best_epoch},
              {"codeword_bits", b.model.arch.codeword_bits()}};
    if (b.kind) side["kind"] = sr::to_string(*b.kind);
    if (b.pattern) {
        side["n_cg"] = b.pattern->n_cg();
        side["positions"] = b.pattern->positions;
    }
    std::ofstream out(dir / "bundle.json");
    if (!out) throw MissingFileError("cannot write bundle sidecar in " + dir.string());
    out << side.dump(2) << '\n';
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
    json side;
    try {
        side = json::parse(read_file(dir / "bundle.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bundle sidecar: ") + e.what());
    }
    ModelBundle b;
    try {
        b.role = side.at("role").get<std::string>();
        b.model.arch = arch_from_json(side.at("arch"));
        b.seed = side.value("seed", std::uint64_t{0});
        b.best_epoch = side.value("best_epoch", 0);
        if (side.contains("kind")) b.kind = sr::parse_input_kind(side.at("kind").get<std::string>());
        if (side.contains("positions")) b.pattern = sr::CsirsPattern{side.at("positions").get<std::vector<int>>()};
    } catch (const json::exception& e) {
        throw FormatError(std::string("bundle sidecar: ") + e.what());
    }
    b.model.encoder = nn::load_model(dir / "encoder.cqnn");
    b.model.decoder = nn::load_model(dir / "decoder.cqnn");
    if (b.model.decoder.input_dim() != b.model.encoder.output_dim())
        throw FormatError("encoder output does not feed the decoder input");
    b.model.trained = true;
    return b;
}

void save_training_log(const std::filesystem::path& path, std::span<const cqinet::EpochLog> log) {
    std::ofstream out(path);
    if (!out) throw MissingFileError("cannot write " + path.string());
    out << "epoch,train_loss,val_loss,val_mse\n";
    for (const auto& e : log)
        out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
            << format_double(e.val_mse) << '\n';
}

std::vector<cqinet::EpochLog> load_training_log(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    if (line != "epoch,train_loss,val_loss,val_mse") throw FormatError("unexpected training log header");
    std::vector<cqinet::EpochLog> log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) throw FormatError("training log row needs 4 fields");
        log.push_back({parse_int<int>(f[0]), parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
    }
    return log;
}

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows) {
    out << kMetricsHeader << '\n';
    for (const auto& r : rows)
        out << r.scheme << ',' << format_double(r.overhead_bits) << ',' << format_double(r.error_high) << ','
            << format_double(r.error_low) << ',' << format_double(r.error_sum) << ','
            << format_double(r.eff_rate_bps) << ',' << r.n_cg << ',' << r.kind << ',' << r.d3 << ',' << r.seed
            << '\n';
}

std::vector<MetricsRow> read_metrics(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("unexpected metrics header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 10) throw FormatError("metrics row needs 10 fields");
        rows.push_back({f[0], parse_double(f[1]), parse_double(f[2]), parse_double(f[3]), parse_double(f[4]),
                        parse_double(f[5]), parse_int<int>(f[6]), f[7], parse_int<int>(f[8]),
                        parse_int<std::uint64_t>(f[9])});
    }
    return rows;
}

void save_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
    std::ofstream out(path);
    if (!out) throw MissingFileError("cannot write " + path.string());
    write_metrics(out, rows);
}

std::vector<MetricsRow> load_metrics(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    return read_metrics(in);
}

}  // namespace cqifb::dataio
