#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cqifb/channel_sim.hpp"
#include "cqifb/cqinet.hpp"
#include "cqifb/link_adaptation.hpp"

namespace cqifb::sr {

enum class InputKind { cqi, snr };

std::string to_string(InputKind kind);
InputKind parse_input_kind(const std::string& s);

/// 1-based pilot subcarrier positions.
struct CsirsPattern {
    std::vector<int> positions;

    int n_cg() const { return static_cast<int>(positions.size()); }
    void validate(int n_c) const;
    /// One index per line; '#' comments allowed.
    static CsirsPattern load(const std::filesystem::path& path, int n_c);
};

/// Uniform placement round(1 + i (n_c - 1) / (n_cg - 1)), i = 0..n_cg-1.
CsirsPattern sample_pattern(int n_c, int n_cg);

struct CoarseInput {
    InputKind kind = InputKind::snr;
    std::vector<double> values;
};

/// snr: pilot SNRs divided by their maximum. cqi: pilot CQIs, normalized to (0, 1).
CoarseInput make_coarse_input(const channel::SnrVector& snrs, const CsirsPattern& pattern, InputKind kind,
                              const link::BlerModel& model, double eps_th = link::kDefaultBlerTarget,
                              int c1 = link::kCqiBits);

/// Encoder over the n_cg-wide coarse input, joint decoder/upscaler to d7 = N_c outputs.
cqinet::Autoencoder build_sr(const cqinet::CqinetArch& arch, int n_cg, double dropout_rate = 0.03);

/// Coarse inputs (columns) for a sample set.
nn::NetworkF::Matrix coarse_matrix(std::span<const channel::SnrVector> snrs, const CsirsPattern& pattern,
                                   InputKind kind, const link::BlerModel& model,
                                   double eps_th = link::kDefaultBlerTarget, int c1 = link::kCqiBits);

/// Trains the SR network to map coarse inputs to the full-resolution subcarrier CQI.
cqinet::TrainResult train_sr(std::span<const channel::SnrVector> train_snr,
                             std::span<const link::CqiVector> train_truth,
                             std::span<const channel::SnrVector> val_snr,
                             std::span<const link::CqiVector> val_truth, const cqinet::CqinetArch& arch,
                             const CsirsPattern& pattern, InputKind kind, const link::BlerModel& model,
                             const nn::TrainConfig& tcfg, double eps_th = link::kDefaultBlerTarget,
                             const cqinet::EpochCallback& on_epoch = {});

std::vector<link::CqiVector> infer_sr(const cqinet::Autoencoder& model, std::span<const channel::SnrVector> snrs,
                                      const CsirsPattern& pattern, InputKind kind,
                                      const link::BlerModel& bler_model, double eps_th = link::kDefaultBlerTarget);

/// Autoencoder architecture for the interpolation baseline: CQInet layout at width n_cg.
cqinet::CqinetArch interp_arch(const cqinet::CqinetArch& arch, int n_cg);

/// Trains the coarse-CQI autoencoder used ahead of interpolation.
cqinet::TrainResult train_interp_baseline(std::span<const channel::SnrVector> train_snr,
                                          std::span<const channel::SnrVector> val_snr,
                                          const cqinet::CqinetArch& arch, const CsirsPattern& pattern,
                                          const link::BlerModel& model, const nn::TrainConfig& tcfg,
                                          double eps_th = link::kDefaultBlerTarget,
                                          const cqinet::EpochCallback& on_epoch = {});

/// Linear interpolation of pilot CQIs across subcarriers, rounded half-down, clamped to 0..15.
link::CqiVector interp_baseline(std::span<const int> coarse_cqi, const CsirsPattern& pattern, int n_c);

/// Full baseline: coarse CQI through the trained coarse autoencoder, then interpolation.
std::vector<link::CqiVector> infer_interp(const cqinet::Autoencoder& coarse_model,
                                          std::span<const channel::SnrVector> snrs, const CsirsPattern& pattern,
                                          const link::BlerModel& bler_model, int n_c,
                                          double eps_th = link::kDefaultBlerTarget);

}  // namespace cqifb::sr
