#include "cqifb/evaluation.hpp"

#include "cqifb/errors.hpp"
#include "cqifb/sr_cqinet.hpp"

namespace cqifb::eval {

std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::subband_offset: return "subband-offset";
        case Scheme::subband_raw: return "subband-raw";
        case Scheme::subband_vos: return "subband-vos";
        case Scheme::subcarrier: return "subcarrier";
        case Scheme::cqinet: return "cqinet";
        case Scheme::srcqinet: return "srcqinet";
        case Scheme::interp: return "interp";
    }
    return "unknown";
}

Scheme parse_scheme(const std::string& s) {
    for (auto scheme : {Scheme::subband_offset, Scheme::subband_raw, Scheme::subband_vos, Scheme::subcarrier,
                        Scheme::cqinet, Scheme::srcqinet, Scheme::interp})
        if (to_string(scheme) == s) return scheme;
    throw ConfigError("unknown scheme '" + s + "'");
}

bool needs_model(Scheme s) { return s == Scheme::cqinet || s == Scheme::srcqinet || s == Scheme::interp; }

std::vector<Prediction> predict(Scheme scheme, const dataio::Dataset& ds, std::span<const std::size_t> idx,
                                const dataio::Pipeline& pipeline, const dataio::ModelBundle* bundle) {
    const auto& sim = ds.sim;
    std::vector<Prediction> out;
    out.reserve(idx.size());
    if (!needs_model(scheme)) {
        for (auto i : idx) {
            const auto& s = ds.samples.at(i);
            switch (scheme) {
                case Scheme::subband_offset: {
                    const auto report = link::encode_offsets(s.subband_cqi);
                    out.push_back({link::decode_offsets(report), static_cast<double>(report.overhead_bits())});
                    break;
                }
                case Scheme::subband_raw:
                    out.push_back({s.subband_cqi, static_cast<double>(link::kCqiBits * sim.n_subbands)});
                    break;
                case Scheme::subband_vos: {
                    const auto report = link::encode_vos(s.subband_cqi);
                    out.push_back({link::decode_offsets(report), static_cast<double>(report.overhead_bits())});
                    break;
                }
                default:
                    out.push_back({s.subcarrier_cqi, static_cast<double>(link::kCqiBits * sim.n_subcarriers)});
            }
        }
        return out;
    }

    if (!bundle) throw ConfigError("scheme " + to_string(scheme) + " needs a trained model");
    const auto& model = bundle->model;
    const double overhead = model.arch.codeword_bits();
    std::vector<link::CqiVector> cqi;
    if (scheme == Scheme::cqinet) {
        cqi = cqinet::reconstruct(model, cqinet::make_cqi_set(dataio::gather_subcarrier_cqi(ds, idx), model.arch.c1).inputs);
    } else {
        if (!bundle->pattern) throw ConfigError("model bundle has no pilot pattern");
        const auto snrs = dataio::gather_snr(ds, idx);
        if (scheme == Scheme::srcqinet) {
            if (!bundle->kind) throw ConfigError("SR bundle has no input kind");
            cqi = sr::infer_sr(model, snrs, *bundle->pattern, *bundle->kind, pipeline.bler, pipeline.eps_th);
        } else {
            cqi = sr::infer_interp(model, snrs, *bundle->pattern, pipeline.bler, sim.n_subcarriers, pipeline.eps_th);
        }
    }
    for (auto& c : cqi) out.push_back({std::move(c), overhead});
    return out;
}

link::SchemeMetrics score(std::span<const Prediction> predictions, const dataio::Dataset& ds,
                          std::span<const std::size_t> idx, const dataio::Pipeline& pipeline) {
    if (predictions.size() != idx.size()) throw ConfigError("one prediction per sample required");
    link::MetricsAccumulator acc;
    for (std::size_t p = 0; p < idx.size(); ++p) {
        const auto& s = ds.samples.at(idx[p]);
        const auto per_tone = link::expand_to_subcarriers(predictions[p].cqi, ds.sim);
        acc.add(s.subcarrier_cqi.values, per_tone.values);
        acc.add_rate(link::effective_rate(predictions[p].cqi, s.snr, pipeline.table, pipeline.bler, ds.sim));
        acc.add_overhead(predictions[p].overhead_bits);
    }
    return acc.finish();
}

link::SchemeMetrics evaluate(Scheme scheme, const dataio::Dataset& ds, std::span<const std::size_t> idx,
                             const dataio::Pipeline& pipeline, const dataio::ModelBundle* bundle) {
    const auto preds = predict(scheme, ds, idx, pipeline, bundle);
    return score(preds, ds, idx, pipeline);
}

}  // namespace cqifb::eval
