#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cqifb/channel_sim.hpp"
#include "cqifb/cqinet.hpp"
#include "cqifb/link_adaptation.hpp"
#include "cqifb/nn.hpp"
#include "cqifb/sr_cqinet.hpp"

namespace cqifb::dataio {

/// Everything needed to turn a sample seed into SNR and CQI vectors.
struct Pipeline {
    channel::SimConfig sim;
    channel::TdlProfile profile = channel::TdlProfile::tdl_c();
    channel::Codebook codebook;
    link::CqiTable table = link::CqiTable::nr_table1();
    link::BlerModel bler = link::BlerModel::from_table(link::CqiTable::nr_table1());
    double eps_th = link::kDefaultBlerTarget;

    /// Hash of every field that influences generated samples.
    std::uint64_t config_hash() const;
};

/// Default pipeline for `sim` with its DFT codebook.
Pipeline make_pipeline(const channel::SimConfig& sim = {});

struct SrSettings {
    int n_cg = 13;
    sr::InputKind kind = sr::InputKind::snr;
    std::optional<std::filesystem::path> pattern_path;
};

/// Parsed global JSON configuration.
struct GlobalConfig {
    Pipeline pipeline;
    /// True when sim.noise_var was given explicitly; otherwise gen-data calibrates it.
    bool noise_var_fixed = false;
    int calibration_realizations = 1000;
    int n_samples = 10000;
    nn::TrainConfig train;
    cqinet::CqinetArch arch;
    SrSettings sr;
};

/// Sections: sim, bler_model_path, tdl_profile_path, cqi_table_path, train, arch, sr.
/// Relative paths resolve against the config file's directory.
GlobalConfig load_config(const std::filesystem::path& path);
GlobalConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});

/// Sets pipeline.sim.noise_var from the calibration pass unless it was fixed.
void calibrate(GlobalConfig& cfg);

struct Sample {
    channel::SnrVector snr;
    link::CqiVector subcarrier_cqi;
    link::CqiVector subband_cqi;
};

struct DatasetMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::uint64_t count = 0;
};

struct Dataset {
    channel::SimConfig sim;
    DatasetMeta meta;
    std::vector<Sample> samples;
};

/// One sample: channel -> precoders -> SNR (rounded to f32) -> both CQI granularities.
Sample generate_sample(const Pipeline& p, std::uint64_t index);

/// Samples 1..count, seeded by `seed` (overrides pipeline.sim.seed).
Dataset generate_dataset(Pipeline p, std::size_t count, std::uint64_t seed);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Seeded shuffle, then 20% validation, 20% test, remainder training.
Split split(std::size_t count, std::uint64_t seed);
inline Split split(const Dataset& ds, std::uint64_t seed) { return split(ds.samples.size(), seed); }

/// Column views of a dataset subset.
std::vector<channel::SnrVector> gather_snr(const Dataset& ds, std::span<const std::size_t> idx);
std::vector<link::CqiVector> gather_subcarrier_cqi(const Dataset& ds, std::span<const std::size_t> idx);

std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Binary "CQDS" file plus a JSON sidecar (<path>.json) with its content hash.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);

struct ModelBundle {
    /// "cqinet", "srcqinet", or "interp".
    std::string role = "cqinet";
    cqinet::Autoencoder model;
    std::uint64_t seed = 0;
    int best_epoch = 0;
    /// Present for the SR and interpolation roles.
    std::optional<sr::InputKind> kind;
    std::optional<sr::CsirsPattern> pattern;
};

/// encoder.cqnn, decoder.cqnn, and bundle.json inside `dir`.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

void save_training_log(const std::filesystem::path& path, std::span<const cqinet::EpochLog> log);
std::vector<cqinet::EpochLog> load_training_log(const std::filesystem::path& path);

/// One row of a metrics report; column names are fixed.
struct MetricsRow {
    std::string scheme;
    double overhead_bits = 0.0;
    double error_high = 0.0;
    double error_low = 0.0;
    double error_sum = 0.0;
    double eff_rate_bps = 0.0;
    int n_cg = 0;
    std::string kind;
    int d3 = 0;
    std::uint64_t seed = 0;
    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader =
    "scheme,overhead_bits,error_high,error_low,error_sum,eff_rate_bps,n_cg,kind,d3,seed";

void write_metrics(std::ostream& out, std::span<const MetricsRow> rows);
std::vector<MetricsRow> read_metrics(std::istream& in);
void save_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> load_metrics(const std::filesystem::path& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace cqifb::dataio
