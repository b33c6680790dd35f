#include "commands.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mapn/error.hpp"
#include "mapn/metrics.hpp"

namespace mapn::cli {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path output_root()
{
    const char* env = std::getenv("MAPN_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

std::string default_run_name(const ExperimentConfig& cfg)
{
    std::string name = cfg.preset + "-" + to_string(cfg.regime) + "-" + to_string(cfg.model.net) + "-" + to_string(cfg.model.pn);
    if (cfg.model.shared_learners) name += "-shared";
    if (cfg.regime == Regime::oaon) name += "-" + cfg.oaon_anatomy;
    return name + "-s" + std::to_string(cfg.seed);
}

RunResult cmd_run(const ExperimentConfig& cfg, const RunOptions& options) { return run_regime(cfg, options); }

namespace {

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string upper(std::string s)
{
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
    return s;
}

std::vector<AnatomyMetrics> metrics_from(const json& arr)
{
    std::vector<AnatomyMetrics> out;
    for (const auto& e : arr) {
        AnatomyMetrics m;
        m.label = e.at("label").get<std::string>();
        m.count = e.at("count").get<std::int64_t>();
        m.psnr = e.at("psnr").get<double>();
        m.psnr_std = e.at("psnr_std").get<double>();
        m.ssim = e.at("ssim").get<double>();
        m.ssim_std = e.at("ssim_std").get<double>();
        m.loss = e.at("loss").get<double>();
        out.push_back(m);
    }
    return out;
}

std::vector<std::string> val_mask_lines(const fs::path& run)
{
    std::vector<std::string> lines;
    std::ifstream in(run / "masks.txt");
    for (std::string line; std::getline(in, line);) {
        if (line.find(" val ") != std::string::npos) lines.push_back(line);
    }
    return lines;
}

}  // namespace

std::vector<TableRow> cmd_table(const std::vector<fs::path>& runs, const fs::path& baseline)
{
    const json base = read_json(baseline / "summary.json");
    const auto base_metrics = metrics_from(base.at("eval"));
    const auto base_masks = val_mask_lines(baseline);
    std::vector<TableRow> rows;
    for (const auto& run : runs) {
        const json s = read_json(run / "summary.json");
        const auto masks = val_mask_lines(run);
        std::vector<std::string> diff;
        if (s.at("val_fingerprint") != base.at("val_fingerprint")) {
            diff.push_back("validation slices: " + s.at("val_fingerprint").get<std::string>() + " vs baseline " +
                           base.at("val_fingerprint").get<std::string>());
        }
        for (const auto& line : masks) {
            if (std::find(base_masks.begin(), base_masks.end(), line) == base_masks.end()) {
                diff.push_back("mask only in run: " + line);
            }
        }
        if (!diff.empty()) {
            std::string msg = run.string() + " was not evaluated like baseline " + baseline.string() + ":";
            for (const auto& d : diff) msg += "\n  " + d;
            throw DataError(msg);
        }
        TableRow row;
        row.regime = upper(s.at("regime").get<std::string>());
        row.model = upper(s.at("net").get<std::string>());
        if (s.at("pn") != "pn0") row.model += "+" + upper(s.at("pn").get<std::string>());
        const auto trained = s.at("training_anatomies").get<std::vector<std::string>>();
        if (trained.size() == 1) {
            row.trained_on = trained.front();
        } else {
            for (std::size_t i = 0; i < trained.size(); ++i) {
                row.trained_on += (i ? "+" : "") + std::string(1, static_cast<char>(std::toupper(
                                                                    static_cast<unsigned char>(trained[i].front()))));
            }
        }
        row.metrics = metrics_from(s.at("eval"));
        row.delta = delta(row.metrics, base_metrics);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_table(std::ostream& out, const std::vector<TableRow>& rows)
{
    out << "regime,model,trained_on,anatomy,psnr,psnr_std,ssim,ssim_std,delta_psnr,delta_ssim\n";
    char buf[256];
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.metrics.size(); ++i) {
            const auto& m = r.metrics[i];
            std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.4f,%.4f,%.6f,%.6f,%.4f,%.6f\n", r.regime.c_str(),
                          r.model.c_str(), r.trained_on.c_str(), m.label.c_str(), m.psnr, m.psnr_std, m.ssim,
                          m.ssim_std, r.delta[i].psnr, r.delta[i].ssim);
            out << buf;
        }
    }
}

std::vector<std::string> cmd_figures(const fs::path& run_dir)
{
    const Checkpoint ck = load_checkpoint(run_dir / "best.ckpt");
    const json cfg_json = json::parse(ck.config);
    const ExperimentConfig cfg = from_json(cfg_json, preset(cfg_json.value("preset", std::string("desk"))));
    const RunSetup setup = prepare_run(cfg);
    Model model = load_run_model(run_dir, "best.ckpt");
    const fs::path out = run_dir / "figures";
    fs::create_directories(out);
    std::vector<std::string> notices;

    auto as_gray = [](const std::vector<double>& v, const kspace::ComplexImage& ref) {
        return GrayImage{ref.height, ref.width, v};
    };
    for (int idx : setup.trained) {
        const auto& data = setup.corpus.anatomies[static_cast<std::size_t>(idx)];
        if (data.val.empty()) continue;
        const auto& target = data.val.front().image;
        const auto& mask = setup.val_masks[static_cast<std::size_t>(idx)];
        const auto measured = kspace::undersample(target, mask);
        const auto recon = model.reconstruct({measured}, mask, setup.model_anatomy(idx)).front();
        const auto zf = kspace::ifft2(measured);
        const auto t = target.magnitude();
        const std::string stem = (out / data.anatomy.label).string();
        write_pgm8(stem + "_target.pgm", as_gray(metrics::rescale_to(t, t), target), 0.0, 1.0);
        write_pgm8(stem + "_recon.pgm", as_gray(metrics::rescale_to(recon.magnitude(), t), target), 0.0, 1.0);
        write_pgm8(stem + "_zero_filled.pgm", as_gray(metrics::rescale_to(zf.magnitude(), t), target), 0.0, 1.0);
        write_pgm8(stem + "_error.pgm", metrics::error_map(recon.magnitude(), t, target.height, target.width), 0.0, 0.1);
        write_pgm8(stem + "_zero_filled_error.pgm", metrics::error_map(zf.magnitude(), t, target.height, target.width),
                   0.0, 0.1);
    }
    const auto rows = metrics::learner_weight_summary(model);
    metrics::write_weight_summary(out / "weights.csv", rows);
    if (rows.empty()) notices.push_back("model has no anatomy-specific learners; weights.csv is empty");
    return notices;
}

std::string cmd_count(const std::string& scale)
{
    ModelSpec spec;
    if (scale == "paper") {
        spec = paper_dccnn_spec(PnKind::pn0);
    } else if (scale == "desk") {
        spec = desk_dccnn_spec(PnKind::pn0);
    } else {
        throw ConfigError("count: scale must be 'paper' or 'desk', got '" + scale + "'");
    }
    return metrics::format_count_report(metrics::count_report(spec, 3));
}

namespace {

struct RunFlags {
    std::string preset = "desk";
    std::string config;
    std::string output;
    std::vector<std::string> set;
    std::string regime, net, pn, warm_start, oaon_anatomy;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, warmup, acceleration;
    bool shared_learners = false;
    bool cold_start = false;
    bool resume = false;
};

ExperimentConfig resolve(const RunFlags& f)
{
    ExperimentConfig cfg = f.config.empty() ? preset(f.preset) : load_config(f.config);
    const std::string preset_output = preset(cfg.preset).output_dir;
    auto put = [&](const std::string& key, const std::string& value) { apply_override(cfg, key + "=" + value); };
    if (!f.regime.empty()) put("regime", f.regime);
    if (!f.net.empty()) put("model.net", f.net);
    if (!f.pn.empty()) put("model.pn", f.pn);
    if (f.shared_learners) cfg.model.shared_learners = true;
    if (!f.oaon_anatomy.empty()) put("oaon_anatomy", f.oaon_anatomy);
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) cfg.schedule.epochs = *f.epochs;
    if (f.warmup) cfg.schedule.warmup_epochs = *f.warmup;
    if (f.acceleration) cfg.mask.acceleration = *f.acceleration;
    if (!f.warm_start.empty()) cfg.warm_start = f.warm_start;
    if (f.cold_start) cfg.cold_start = true;
    for (const auto& s : f.set) apply_override(cfg, s);
    if (!f.output.empty()) {
        cfg.output_dir = f.output;
    } else if (cfg.output_dir == preset_output) {
        cfg.output_dir = (output_root() / default_run_name(cfg)).string();
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"mapn: multi-anatomy undersampled MRI reconstruction"};
    app.require_subcommand(1);

    RunFlags rf;
    auto* run = app.add_subcommand("run", "Train one regime and write a run directory");
    run->add_option("--preset", rf.preset, "desk or paper")->capture_default_str();
    run->add_option("--config", rf.config, "JSON config file");
    run->add_option("--regime", rf.regime, "oaon, maon or mapn");
    run->add_option("--net", rf.net, "dccnn or unet");
    run->add_option("--pn", rf.pn, "pn0 ... pn4");
    run->add_flag("--shared-learners", rf.shared_learners, "MAON ablation with replicated shared 1x1 learners");
    run->add_option("--oaon-anatomy", rf.oaon_anatomy, "training anatomy of an oaon run");
    run->add_option("--seed", rf.seed);
    run->add_option("--epochs", rf.epochs);
    run->add_option("--warmup-epochs", rf.warmup);
    run->add_option("--acceleration", rf.acceleration);
    run->add_option("--warm-start", rf.warm_start, "MAON checkpoint or run directory");
    run->add_flag("--cold-start", rf.cold_start, "train mapn without a warm start");
    run->add_option("--output", rf.output, "run directory");
    run->add_option("--set", rf.set, "field override, e.g. schedule.batch_size=8");
    run->add_flag("--resume", rf.resume, "continue from last.ckpt in the run directory");
    bool print_config = false;
    run->add_flag("--print-config", print_config, "print the resolved config and exit");

    std::vector<std::string> table_runs;
    std::string table_baseline, table_out;
    auto* table = app.add_subcommand("table", "Per-anatomy PSNR/SSIM with deltas against a baseline run");
    table->add_option("runs", table_runs, "run directories")->required();
    table->add_option("--baseline", table_baseline, "baseline run directory")->required();
    table->add_option("--out", table_out, "CSV path (default: stdout)");

    std::string fig_run;
    auto* figures = app.add_subcommand("figures", "Reconstructions, error maps and learner weights of a run");
    figures->add_option("run", fig_run)->required();

    std::string count_scale = "paper", count_out;
    auto* count = app.add_subcommand("count", "Parameter accounting for every learning fashion");
    count->add_option("--scale", count_scale, "paper or desk")->capture_default_str();
    count->add_option("--out", count_out, "CSV path (default: stdout)");

    std::string ingest_dir, ingest_label, ingest_out;
    std::int64_t ingest_h = 64, ingest_w = 64;
    auto* ingest = app.add_subcommand("ingest", "Convert a directory of PGM slices into a corpus");
    ingest->add_option("dir", ingest_dir)->required();
    ingest->add_option("--label", ingest_label, "anatomy label")->required();
    ingest->add_option("--out", ingest_out, "corpus directory")->required();
    ingest->add_option("--height", ingest_h)->capture_default_str();
    ingest->add_option("--width", ingest_w)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }

    try {
        if (*run) {
            const ExperimentConfig cfg = resolve(rf);
            if (print_config) {
                std::cout << to_json(cfg).dump(2) << "\n";
                return ok;
            }
            RunOptions opts;
            opts.resume = rf.resume;
            opts.log = [](const std::string& msg) { std::cerr << msg << std::endl; };
            const auto result = cmd_run(cfg, opts);
            for (const auto& m : result.eval) {
                std::printf("%s psnr %.3f ssim %.4f\n", m.label.c_str(), m.psnr, m.ssim);
            }
            std::printf("run directory: %s (config %s)\n", result.dir.string().c_str(), result.config_hash.c_str());
        } else if (*table) {
            std::vector<fs::path> runs(table_runs.begin(), table_runs.end());
            const auto rows = cmd_table(runs, table_baseline);
            if (table_out.empty()) {
                write_table(std::cout, rows);
            } else {
                std::ofstream out(table_out);
                write_table(out, rows);
            }
        } else if (*figures) {
            for (const auto& n : cmd_figures(fig_run)) std::cerr << n << "\n";
            std::cout << (fs::path(fig_run) / "figures").string() << "\n";
        } else if (*count) {
            const std::string csv = cmd_count(count_scale);
            if (count_out.empty()) {
                std::cout << csv;
            } else {
                std::ofstream(count_out) << csv;
            }
        } else if (*ingest) {
            SkipReport skips;
            Corpus corpus;
            AnatomyData data;
            data.anatomy = {0, ingest_label};
            data.train = ingest_external(ingest_dir, data.anatomy, ingest_h, ingest_w, &skips);
            corpus.anatomies.push_back(std::move(data));
            save_corpus(ingest_out, corpus);
            for (const auto& s : skips.entries) std::cerr << "skipped " << s << "\n";
            std::cout << corpus.anatomies.front().train.size() << " slices written to " << ingest_out << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return data_error;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return numeric_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    }
    return ok;
}

}  // namespace mapn::cli
