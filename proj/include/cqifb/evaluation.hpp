#pragma once

#include <span>
#include <string>
#include <vector>

#include "cqifb/dataio.hpp"
#include "cqifb/link_adaptation.hpp"

namespace cqifb::eval {

enum class Scheme { subband_offset, subband_raw, subband_vos, subcarrier, cqinet, srcqinet, interp };

std::string to_string(Scheme s);
/// Accepts the CLI spellings: subband-offset, subband-raw, subband-vos, subcarrier, cqinet, srcqinet, interp.
Scheme parse_scheme(const std::string& s);
bool needs_model(Scheme s);

/// What one scheme reports for each evaluated sample.
struct Prediction {
    link::CqiVector cqi;  // per-subband for the subband schemes, per-subcarrier otherwise
    double overhead_bits = 0.0;
};

/// Predictions for samples `idx`; learned schemes need `bundle`.
std::vector<Prediction> predict(Scheme scheme, const dataio::Dataset& ds, std::span<const std::size_t> idx,
                                const dataio::Pipeline& pipeline, const dataio::ModelBundle* bundle = nullptr);

/// Classification errors against the per-subcarrier truth, mean effective rate and overhead.
link::SchemeMetrics score(std::span<const Prediction> predictions, const dataio::Dataset& ds,
                          std::span<const std::size_t> idx, const dataio::Pipeline& pipeline);

link::SchemeMetrics evaluate(Scheme scheme, const dataio::Dataset& ds, std::span<const std::size_t> idx,
                             const dataio::Pipeline& pipeline, const dataio::ModelBundle* bundle = nullptr);

}  // namespace cqifb::eval
