#include "cqifb/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cqifb/dataio.hpp"
#include "cqifb/errors.hpp"
#include "cqifb/evaluation.hpp"
#include "cqifb/sr_cqinet.hpp"

namespace cqifb::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDatasetFile = "dataset.cqds";

struct Options {
    std::string config;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;

    int d3 = 0;
    int epochs = 0;
    int ncg = 0;
    std::string kind;
    std::string baseline;
    std::string scheme;
    std::string model_dir;
    std::string over = "d3";
    std::vector<int> values;
    int sample = -1;
};

struct Context {
    dataio::GlobalConfig cfg;
    fs::path out;
    std::ostream& log;
};

Context load_context(const Options& o, std::ostream& log) {
    if (!fs::exists(o.config)) throw MissingFileError("config file not found: " + o.config);
    Context ctx{dataio::load_config(o.config), fs::path(o.out_dir), log};
    if (o.seed) {
        ctx.cfg.pipeline.sim.seed = *o.seed;
        ctx.cfg.train.seed = *o.seed;
    }
    if (o.epochs > 0) ctx.cfg.train.epochs = o.epochs;
    if (o.d3 > 0) ctx.cfg.arch.d3 = o.d3;
    if (o.ncg > 0) ctx.cfg.sr.n_cg = o.ncg;
    if (!o.kind.empty()) ctx.cfg.sr.kind = sr::parse_input_kind(o.kind);
    ctx.cfg.arch.validate();
    return ctx;
}

/// Loads the dataset and restores the pipeline's noise power from it.
dataio::Dataset load_dataset(Context& ctx) {
    const auto path = ctx.out / kDatasetFile;
    if (!fs::exists(path)) throw MissingFileError("dataset not found: " + path.string() + " (run gen-data first)");
    auto ds = dataio::load_dataset(path);
    auto& sim = ctx.cfg.pipeline.sim;
    if (ds.sim.n_subcarriers != sim.n_subcarriers || ds.sim.n_subbands != sim.n_subbands)
        throw ConfigError("dataset geometry does not match the config");
    sim = ds.sim;
    return ds;
}

sr::CsirsPattern pattern_for(const Context& ctx) {
    const int nc = ctx.cfg.pipeline.sim.n_subcarriers;
    if (ctx.cfg.sr.pattern_path) return sr::CsirsPattern::load(*ctx.cfg.sr.pattern_path, nc);
    return sr::sample_pattern(nc, ctx.cfg.sr.n_cg);
}

fs::path cqinet_dir(const Context& ctx) { return ctx.out / ("cqinet_d3_" + std::to_string(ctx.cfg.arch.d3)); }

fs::path srcqinet_dir(const Context& ctx, int n_cg) {
    return ctx.out / ("srcqinet_" + sr::to_string(ctx.cfg.sr.kind) + "_ncg" + std::to_string(n_cg) + "_d3_" +
                      std::to_string(ctx.cfg.arch.d3));
}

fs::path interp_dir(const Context& ctx, int n_cg) {
    return ctx.out / ("interp_ncg" + std::to_string(n_cg) + "_d3_" + std::to_string(ctx.cfg.arch.d3));
}

cqinet::EpochCallback progress(std::ostream& log, int total) {
    return [&log, total](const cqinet::EpochLog& e) {
        if (e.epoch == 1 || e.epoch == total || e.epoch % 25 == 0)
            log << "epoch " << e.epoch << "/" << total << " train_loss " << dataio::format_double(e.train_loss)
                << " val_loss " << dataio::format_double(e.val_loss) << '\n';
    };
}

void write_bundle(const fs::path& dir, dataio::ModelBundle bundle, const cqinet::TrainResult& r) {
    bundle.model = r.model;
    bundle.best_epoch = r.best_epoch;
    dataio::save_bundle(dir, bundle);
    dataio::save_training_log(dir / "train_log.csv", r.log);
}

fs::path train_cqinet(Context& ctx, const dataio::Dataset& ds) {
    const auto sp = dataio::split(ds, ds.meta.seed);
    const auto train = dataio::gather_subcarrier_cqi(ds, sp.train);
    const auto val = dataio::gather_subcarrier_cqi(ds, sp.val);
    const auto r = cqinet::train(train, val, ctx.cfg.arch, ctx.cfg.train, progress(ctx.log, ctx.cfg.train.epochs));
    const auto dir = cqinet_dir(ctx);
    write_bundle(dir, {"cqinet", {}, ctx.cfg.train.seed, 0, std::nullopt, std::nullopt}, r);
    ctx.log << "wrote " << dir.string() << " (S = " << ctx.cfg.arch.codeword_bits() << " bits, best epoch "
            << r.best_epoch << ")\n";
    return dir;
}

fs::path train_srcqinet(Context& ctx, const dataio::Dataset& ds, bool interp_baseline) {
    const auto sp = dataio::split(ds, ds.meta.seed);
    const auto pattern = pattern_for(ctx);
    const auto train_snr = dataio::gather_snr(ds, sp.train);
    const auto val_snr = dataio::gather_snr(ds, sp.val);
    const auto& p = ctx.cfg.pipeline;
    cqinet::TrainResult r;
    fs::path dir;
    dataio::ModelBundle bundle;
    bundle.seed = ctx.cfg.train.seed;
    bundle.pattern = pattern;
    if (interp_baseline) {
        r = sr::train_interp_baseline(train_snr, val_snr, ctx.cfg.arch, pattern, p.bler, ctx.cfg.train, p.eps_th,
                                      progress(ctx.log, ctx.cfg.train.epochs));
        dir = interp_dir(ctx, pattern.n_cg());
        bundle.role = "interp";
        bundle.kind = sr::InputKind::cqi;
    } else {
        r = sr::train_sr(train_snr, dataio::gather_subcarrier_cqi(ds, sp.train), val_snr,
                         dataio::gather_subcarrier_cqi(ds, sp.val), ctx.cfg.arch, pattern, ctx.cfg.sr.kind, p.bler,
                         ctx.cfg.train, p.eps_th, progress(ctx.log, ctx.cfg.train.epochs));
        dir = srcqinet_dir(ctx, pattern.n_cg());
        bundle.role = "srcqinet";
        bundle.kind = ctx.cfg.sr.kind;
    }
    write_bundle(dir, bundle, r);
    ctx.log << "wrote " << dir.string() << '\n';
    return dir;
}

dataio::MetricsRow evaluate_row(Context& ctx, const dataio::Dataset& ds, eval::Scheme scheme,
                                const std::optional<fs::path>& model_dir) {
    const auto sp = dataio::split(ds, ds.meta.seed);
    std::optional<dataio::ModelBundle> bundle;
    if (eval::needs_model(scheme)) {
        fs::path dir;
        if (model_dir) {
            dir = *model_dir;
        } else if (scheme == eval::Scheme::cqinet) {
            dir = cqinet_dir(ctx);
        } else {
            const int n_cg = ctx.cfg.sr.pattern_path ? pattern_for(ctx).n_cg() : ctx.cfg.sr.n_cg;
            dir = scheme == eval::Scheme::srcqinet ? srcqinet_dir(ctx, n_cg) : interp_dir(ctx, n_cg);
        }
        if (!fs::exists(dir / "bundle.json")) throw MissingFileError("model bundle not found: " + dir.string());
        bundle = dataio::load_bundle(dir);
    }
    const auto m = eval::evaluate(scheme, ds, sp.test, ctx.cfg.pipeline, bundle ? &*bundle : nullptr);
    dataio::MetricsRow row;
    row.scheme = eval::to_string(scheme);
    row.overhead_bits = m.overhead_bits;
    row.error_high = m.error_high;
    row.error_low = m.error_low;
    row.error_sum = m.error_sum;
    row.eff_rate_bps = m.effective_rate_bps;
    row.seed = ds.meta.seed;
    if (bundle) {
        row.d3 = bundle->model.arch.d3;
        row.seed = bundle->seed;
        if (bundle->pattern) row.n_cg = bundle->pattern->n_cg();
        if (bundle->kind) row.kind = sr::to_string(*bundle->kind);
    }
    return row;
}

void write_audit(const fs::path& path, const dataio::Dataset& ds) {
    const auto sp = dataio::split(ds, ds.meta.seed);
    auto sorted = sp.test;
    std::sort(sorted.begin(), sorted.end());
    std::ofstream out(path);
    if (!out) throw MissingFileError("cannot write " + path.string());
    out << "# test-split sample indices used for evaluation\n";
    for (auto i : sorted) out << i << '\n';
}

int cmd_gen_data(Context& ctx) {
    fs::create_directories(ctx.out);
    if (!ctx.cfg.noise_var_fixed) ctx.log << "calibrating noise power...\n";
    dataio::calibrate(ctx.cfg);
    const auto& p = ctx.cfg.pipeline;
    ctx.log << "noise_var " << dataio::format_double(p.sim.noise_var) << "; generating " << ctx.cfg.n_samples
            << " samples\n";
    const auto ds = dataio::generate_dataset(p, static_cast<std::size_t>(ctx.cfg.n_samples), p.sim.seed);
    dataio::save_dataset(ctx.out / kDatasetFile, ds);
    ctx.log << "wrote " << (ctx.out / kDatasetFile).string() << '\n';
    return kOk;
}

int cmd_eval(Context& ctx, const Options& o) {
    const auto scheme = eval::parse_scheme(o.scheme);
    const auto ds = load_dataset(ctx);
    std::optional<fs::path> model_dir;
    if (!o.model_dir.empty()) model_dir = fs::path(o.model_dir);
    const auto row = evaluate_row(ctx, ds, scheme, model_dir);
    std::string name = "eval_" + row.scheme;
    if (row.d3 > 0) name += "_d3_" + std::to_string(row.d3);
    if (row.n_cg > 0) name += "_ncg" + std::to_string(row.n_cg);
    if (!row.kind.empty() && scheme == eval::Scheme::srcqinet) name += "_" + row.kind;
    const std::vector<dataio::MetricsRow> rows{row};
    dataio::save_metrics(ctx.out / (name + ".csv"), rows);
    write_audit(ctx.out / "eval_test_indices.txt", ds);
    dataio::write_metrics(ctx.log, rows);
    return kOk;
}

int cmd_sweep(Context& ctx, const Options& o) {
    const auto ds = load_dataset(ctx);
    std::vector<dataio::MetricsRow> rows;
    std::string file;
    if (o.over == "d3") {
        const std::vector<int> widths = o.values.empty() ? std::vector<int>{5, 10, 15, 20, 25, 30, 35, 40} : o.values;
        for (int w : widths) {
            ctx.cfg.arch.d3 = w;
            ctx.cfg.arch.validate();
            const auto dir = train_cqinet(ctx, ds);
            rows.push_back(evaluate_row(ctx, ds, eval::Scheme::cqinet, dir));
        }
        file = "sweep_d3.csv";
    } else if (o.over == "ncg") {
        const std::vector<int> counts = o.values.empty() ? std::vector<int>{4, 8, 13, 22, 52, 624} : o.values;
        ctx.cfg.sr.pattern_path.reset();
        for (int n : counts) {
            ctx.cfg.sr.n_cg = n;
            const auto dir = train_srcqinet(ctx, ds, false);
            rows.push_back(evaluate_row(ctx, ds, eval::Scheme::srcqinet, dir));
        }
        file = "sweep_ncg_" + sr::to_string(ctx.cfg.sr.kind) + ".csv";
    } else {
        throw ConfigError("--over must be d3 or ncg");
    }
    dataio::save_metrics(ctx.out / file, rows);
    write_audit(ctx.out / "eval_test_indices.txt", ds);
    dataio::write_metrics(ctx.log, rows);
    return kOk;
}

int cmd_report(Context& ctx, const Options& o) {
    if (!fs::exists(ctx.out)) throw MissingFileError("output directory not found: " + ctx.out.string());
    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(ctx.out)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
            (name.rfind("eval_", 0) == 0 || name.rfind("sweep_", 0) == 0))
            inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
    std::vector<dataio::MetricsRow> merged;
    for (const auto& p : inputs) {
        const auto rows = dataio::load_metrics(p);
        merged.insert(merged.end(), rows.begin(), rows.end());
    }
    dataio::save_metrics(ctx.out / "report.csv", merged);
    ctx.log << "merged " << inputs.size() << " files into " << (ctx.out / "report.csv").string() << '\n';

    const auto ds = load_dataset(ctx);
    const auto sp = dataio::split(ds, ds.meta.seed);
    const std::size_t pick = o.sample >= 0 ? static_cast<std::size_t>(o.sample) : 0;
    if (pick >= sp.test.size()) throw ConfigError("--sample exceeds the test split size");
    const std::vector<std::size_t> one{sp.test[pick]};
    const auto& sample = ds.samples[one.front()];

    std::vector<std::pair<std::string, link::CqiVector>> columns;
    for (auto scheme : {eval::Scheme::subband_offset, eval::Scheme::subband_raw, eval::Scheme::subband_vos})
        columns.emplace_back(eval::to_string(scheme),
                             link::expand_to_subcarriers(eval::predict(scheme, ds, one, ctx.cfg.pipeline)[0].cqi, ds.sim));
    // Learned schemes join the trace when their default bundles exist.
    const int n_cg = ctx.cfg.sr.n_cg;
    const std::vector<std::pair<eval::Scheme, fs::path>> learned{
        {eval::Scheme::cqinet, cqinet_dir(ctx)},
        {eval::Scheme::srcqinet, srcqinet_dir(ctx, n_cg)},
        {eval::Scheme::interp, interp_dir(ctx, n_cg)}};
    for (const auto& [scheme, dir] : learned) {
        if (!fs::exists(dir / "bundle.json")) continue;
        const auto bundle = dataio::load_bundle(dir);
        columns.emplace_back(eval::to_string(scheme), eval::predict(scheme, ds, one, ctx.cfg.pipeline, &bundle)[0].cqi);
    }

    const auto trace_path = ctx.out / ("trace_" + std::to_string(pick) + ".csv");
    std::ofstream out(trace_path);
    if (!out) throw MissingFileError("cannot write " + trace_path.string());
    out << "subcarrier,snr_db,truth";
    for (const auto& [name, _] : columns) out << ',' << name;
    out << '\n';
    for (int n = 0; n < ds.sim.n_subcarriers; ++n) {
        out << n + 1 << ',' << dataio::format_double(link::to_db(sample.snr.values[n])) << ','
            << sample.subcarrier_cqi.values[n];
        for (const auto& [name, c] : columns) out << ',' << c.values[n];
        out << '\n';
    }
    ctx.log << "wrote " << trace_path.string() << " (dataset sample " << one.front() << ")\n";
    return kOk;
}

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "Global JSON configuration")->required();
    cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
    cmd->add_option("--seed", o.seed, "Overrides the dataset and training seeds");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Subcarrier-level CQI feedback simulator and learned compression toolkit", "cqifb"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate and save the SNR/CQI dataset");
    add_common(gen, o);

    auto* tc = app.add_subcommand("train-cqinet", "Train the CQI autoencoder");
    add_common(tc, o);
    tc->add_option("--d3", o.d3, "Codeword dense width");
    tc->add_option("--epochs", o.epochs, "Override train.epochs");

    auto* ts = app.add_subcommand("train-srcqinet", "Train the super-resolution variant");
    add_common(ts, o);
    ts->add_option("--ncg", o.ncg, "Number of pilot subcarriers");
    ts->add_option("--kind", o.kind, "Coarse input type")->check(CLI::IsMember({"cqi", "snr"}));
    ts->add_option("--d3", o.d3, "Codeword dense width");
    ts->add_option("--epochs", o.epochs, "Override train.epochs");
    ts->add_option("--baseline", o.baseline, "Train the interpolation baseline autoencoder instead")
        ->check(CLI::IsMember({"interp"}));

    auto* ev = app.add_subcommand("eval", "Evaluate one scheme on the test split");
    add_common(ev, o);
    ev->add_option("--scheme", o.scheme, "subband-offset | subband-raw | subband-vos | subcarrier | cqinet | "
                                         "srcqinet | interp")
        ->required()
        ->check(CLI::IsMember({"subband-offset", "subband-raw", "subband-vos", "subcarrier", "cqinet",
                               "srcqinet", "interp"}));
    ev->add_option("--model", o.model_dir, "Model bundle directory (defaults to the trained bundle)");
    ev->add_option("--d3", o.d3, "Codeword width of the default bundle");
    ev->add_option("--ncg", o.ncg, "Pilot count of the default bundle");
    ev->add_option("--kind", o.kind, "Input kind of the default bundle")->check(CLI::IsMember({"cqi", "snr"}));

    auto* sw = app.add_subcommand("sweep", "Train and evaluate across codeword widths or pilot counts");
    add_common(sw, o);
    sw->add_option("--over", o.over, "d3 or ncg")->check(CLI::IsMember({"d3", "ncg"}))->capture_default_str();
    sw->add_option("--values", o.values, "Explicit sweep values");
    sw->add_option("--kind", o.kind, "SR input kind for --over ncg")->check(CLI::IsMember({"cqi", "snr"}));
    sw->add_option("--epochs", o.epochs, "Override train.epochs");
    sw->add_option("--d3", o.d3, "Codeword width for --over ncg");

    auto* rp = app.add_subcommand("report", "Merge metrics CSVs and write a per-subcarrier trace");
    add_common(rp, o);
    rp->add_option("--sample", o.sample, "Test-split position of the traced sample");

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "ERROR " << kConfigError << ": " << e.what() << '\n' << app.help();
        return kConfigError;
    }

    try {
        if (gen->parsed()) {
            auto ctx = load_context(o, out);
            return cmd_gen_data(ctx);
        }
        if (tc->parsed()) {
            auto ctx = load_context(o, out);
            const auto ds = load_dataset(ctx);
            train_cqinet(ctx, ds);
            return kOk;
        }
        if (ts->parsed()) {
            auto ctx = load_context(o, out);
            const auto ds = load_dataset(ctx);
            train_srcqinet(ctx, ds, o.baseline == "interp");
            return kOk;
        }
        if (ev->parsed()) {
            auto ctx = load_context(o, out);
            return cmd_eval(ctx, o);
        }
        if (sw->parsed()) {
            auto ctx = load_context(o, out);
            return cmd_sweep(ctx, o);
        }
        auto ctx = load_context(o, out);
        return cmd_report(ctx, o);
    } catch (const ConfigError& e) {
        err << "ERROR " << kConfigError << ": " << e.what() << '\n';
        return kConfigError;
    } catch (const MissingFileError& e) {
        err << "ERROR " << kMissingFile << ": " << e.what() << '\n';
        return kMissingFile;
    } catch (const std::exception& e) {
        err << "ERROR " << kInternalError << ": " << e.what() << '\n';
        return kInternalError;
    }
}

}  // namespace cqifb::cli
