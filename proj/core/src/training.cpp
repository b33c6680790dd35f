#include "mapn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mapn/error.hpp"
#include "mapn/metrics.hpp"
#include "mapn/random.hpp"

namespace mapn {

using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v)
{
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

void score(const kspace::ComplexImage& recon, const kspace::ComplexImage& target, std::vector<double>& psnr,
           std::vector<double>& ssim)
{
    const auto r = recon.magnitude();
    const auto t = target.magnitude();
    psnr.push_back(metrics::psnr(r, t));
    ssim.push_back(metrics::ssim(r, t, target.height, target.width));
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

StepResult train_step(Model& model, Adam& adam, const std::vector<const Slice*>& batch, int anatomy,
                      const kspace::SamplingMask& mask, const StepOptions& options)
{
    if (batch.empty()) throw DataError("empty batch " + options.batch_id);
    model.switch_anatomy(anatomy);
    std::vector<kspace::ComplexImage> measured, targets;
    for (const Slice* s : batch) {
        measured.push_back(kspace::undersample(s->image, mask));
        targets.push_back(s->image);
    }
    Graph graph;
    ForwardContext ctx{graph, model.registry(), ops::Mode::train, options.freeze_shared_conv3x3};
    const Var y = model.forward(ctx, measured, mask);
    const Var loss = ops::l1_loss(y, graph.constant(kspace::to_network(targets)));

    StepResult result;
    result.loss = loss.value()[0];
    if (!std::isfinite(result.loss)) {
        throw NumericError("non-finite loss in batch " + options.batch_id + " (anatomy " +
                           model.registry().anatomy(anatomy).label + ")");
    }
    try {
        adam.step(graph.backward(loss));
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in batch " + options.batch_id);
    }
    const Tensor& out = y.value();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        score(kspace::from_network(out, static_cast<std::int64_t>(b)), targets[b], result.psnr, result.ssim);
    }
    return result;
}

AnatomyMetrics evaluate(Model& model, const std::vector<Slice>& slices, const kspace::SamplingMask& mask, int anatomy,
                        int batch_size)
{
    AnatomyMetrics m;
    m.label = slices.empty() ? std::string{} : slices.front().anatomy.label;
    m.count = static_cast<std::int64_t>(slices.size());
    std::vector<double> psnr, ssim;
    double loss = 0.0;
    for (std::size_t b = 0; b < slices.size(); b += static_cast<std::size_t>(batch_size)) {
        std::vector<kspace::ComplexImage> measured;
        const std::size_t end = std::min(slices.size(), b + static_cast<std::size_t>(batch_size));
        for (std::size_t i = b; i < end; ++i) measured.push_back(kspace::undersample(slices[i].image, mask));
        const auto recon = model.reconstruct(measured, mask, anatomy, ops::Mode::eval);
        for (std::size_t i = b; i < end; ++i) {
            const auto& r = recon[i - b];
            const auto& t = slices[i].image;
            double l = 0.0;
            for (std::size_t p = 0; p < t.size(); ++p) l += std::abs(r.real[p] - t.real[p]) + std::abs(r.imag[p] - t.imag[p]);
            loss += l / static_cast<double>(2 * t.size());
            score(r, t, psnr, ssim);
        }
    }
    m.psnr = mean_of(psnr);
    m.psnr_std = std_of(psnr);
    m.ssim = mean_of(ssim);
    m.ssim_std = std_of(ssim);
    m.loss = slices.empty() ? 0.0 : loss / static_cast<double>(slices.size());
    return m;
}

AnatomyMetrics evaluate_zero_filled(const std::vector<Slice>& slices, const kspace::SamplingMask& mask)
{
    AnatomyMetrics m;
    m.label = slices.empty() ? std::string{} : slices.front().anatomy.label;
    m.count = static_cast<std::int64_t>(slices.size());
    std::vector<double> psnr, ssim;
    double loss = 0.0;
    for (const auto& s : slices) {
        const auto zf = kspace::ifft2(kspace::undersample(s.image, mask));
        double l = 0.0;
        for (std::size_t p = 0; p < zf.size(); ++p) l += std::abs(zf.real[p] - s.image.real[p]) + std::abs(zf.imag[p] - s.image.imag[p]);
        loss += l / static_cast<double>(2 * zf.size());
        score(zf, s.image, psnr, ssim);
    }
    m.psnr = mean_of(psnr);
    m.psnr_std = std_of(psnr);
    m.ssim = mean_of(ssim);
    m.ssim_std = std_of(ssim);
    m.loss = slices.empty() ? 0.0 : loss / static_cast<double>(slices.size());
    return m;
}

std::vector<MetricDelta> delta(const std::vector<AnatomyMetrics>& run, const std::vector<AnatomyMetrics>& baseline)
{
    std::vector<MetricDelta> out;
    for (const auto& r : run) {
        const auto it = std::find_if(baseline.begin(), baseline.end(), [&](const auto& b) { return b.label == r.label; });
        if (it == baseline.end()) throw DataError("baseline has no results for anatomy '" + r.label + "'");
        out.push_back({r.label, r.psnr - it->psnr, r.ssim - it->ssim});
    }
    return out;
}

std::vector<std::string> warm_start(Model& model, const Checkpoint& source)
{
    std::map<std::string, const TensorRecord*> by_key;
    std::string first_label;
    for (const auto& r : source.tensors) {
        by_key[r.key] = &r;
        if (first_label.empty() && r.partition.rfind("specific:", 0) == 0) first_label = r.partition.substr(9);
    }
    auto& reg = model.registry();
    std::vector<std::string> diffs, loaded;
    auto take = [&](Parameter& p, const TensorRecord* r) {
        if (r->value.shape() != p.value.shape()) {
            diffs.push_back(p.key + ": model " + to_string(p.value.shape()) + " vs checkpoint " + to_string(r->value.shape()) +
                            " (" + r->key + ")");
            return;
        }
        p.value = r->value;
        loaded.push_back(p.key);
    };
    std::vector<std::string> shared_names;
    for (const auto& entry : reg.shared()) shared_names.push_back(entry.first);
    for (const auto& name : shared_names) {
        Parameter& p = *reg.find_shared(name);
        const auto it = by_key.find(name);
        if (it != by_key.end()) {
            take(p, it->second);
        } else if (p.role == ParamRole::conv3x3) {
            diffs.push_back(p.key + ": missing from checkpoint");
        }
    }
    for (int a = 0; a < reg.anatomy_count(); ++a) {
        for (auto& [name, p] : reg.specific(a)) {
            const TensorRecord* r = nullptr;
            for (const std::string& key : {p.key, name, name + "@" + first_label}) {
                const auto it = by_key.find(key);
                if (it != by_key.end()) {
                    r = it->second;
                    break;
                }
            }
            if (r) take(p, r);
        }
    }
    if (!diffs.empty()) {
        std::string msg = "warm-start checkpoint is incompatible with the model:";
        for (const auto& d : diffs) msg += "\n  " + d;
        throw ConfigError(msg);
    }
    return loaded;
}

int RunSetup::model_anatomy(int corpus_index) const
{
    if (config.regime == Regime::maon) return 0;
    const auto it = std::find(trained.begin(), trained.end(), corpus_index);
    if (it == trained.end()) throw DataError("anatomy index " + std::to_string(corpus_index) + " is not trained by this run");
    return static_cast<int>(it - trained.begin());
}

kspace::SamplingMask RunSetup::train_mask(int corpus_index, int epoch) const
{
    const auto a = static_cast<std::uint64_t>(corpus_index);
    const std::uint64_t seed = config.mask.resample_per_epoch
                                   ? derive_seed(config.data.seed, "mask", {a, 0, static_cast<std::uint64_t>(epoch) + 1})
                                   : derive_seed(config.data.seed, "mask", {a, 0});
    return kspace::make_cartesian_mask(config.data.width, config.mask.acceleration,
                                       config.mask.effective_center_fraction(), seed);
}

RunSetup prepare_run(const ExperimentConfig& config)
{
    config.validate();
    RunSetup setup;
    setup.config = config;
    const auto& d = config.data;
    if (d.source == "phantom") {
        setup.corpus = make_phantom_corpus(config.anatomies, d.train_per_anatomy, d.val_per_anatomy, d.height, d.width, d.seed);
    } else {
        setup.corpus.seed = d.seed;
        for (std::size_t a = 0; a < config.anatomies.size(); ++a) {
            const AnatomyId id{static_cast<int>(a), config.anatomies[a]};
            AnatomyData ad;
            ad.anatomy = id;
            const auto it = d.ingest_dirs.find(id.label);
            if (it != d.ingest_dirs.end()) {
                auto slices = ingest_external(it->second, id, d.height, d.width, &setup.skips);
                const auto nval = std::min<std::int64_t>(d.val_per_anatomy, static_cast<std::int64_t>(slices.size()) / 2);
                const auto ntrain = std::min<std::int64_t>(d.train_per_anatomy, static_cast<std::int64_t>(slices.size()) - nval);
                for (std::int64_t i = 0; i < ntrain; ++i) ad.train.push_back(slices[static_cast<std::size_t>(i)]);
                for (std::int64_t i = 0; i < nval; ++i) {
                    Slice s = slices[slices.size() - static_cast<std::size_t>(nval - i)];
                    s.split = Split::val;
                    s.index = i;
                    ad.val.push_back(std::move(s));
                }
            }
            setup.corpus.anatomies.push_back(std::move(ad));
        }
    }
    for (const auto& label : config.training_anatomies()) {
        const auto it = std::find(config.anatomies.begin(), config.anatomies.end(), label);
        const int idx = static_cast<int>(it - config.anatomies.begin());
        if (setup.corpus.anatomies[static_cast<std::size_t>(idx)].train.empty()) {
            throw DataError("no training slices for anatomy '" + label + "'");
        }
        setup.trained.push_back(idx);
    }
    for (std::size_t a = 0; a < config.anatomies.size(); ++a) {
        setup.val_masks.push_back(kspace::make_cartesian_mask(config.data.width, config.mask.acceleration,
                                                              config.mask.effective_center_fraction(),
                                                              derive_seed(config.data.seed, "mask", {a, 1})));
    }
    return setup;
}

Checkpoint load_run_checkpoint(const std::filesystem::path& path)
{
    if (std::filesystem::is_directory(path)) return load_checkpoint(path / "best.ckpt");
    if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
    return load_checkpoint(path);
}

namespace {

ExperimentConfig config_from_checkpoint(const Checkpoint& ckpt)
{
    json j;
    try {
        j = json::parse(ckpt.config);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("checkpoint carries an unreadable config: ") + e.what());
    }
    ExperimentConfig base = j.contains("preset") && j["preset"].is_string() ? preset(j["preset"].get<std::string>())
                                                                             : desk_preset();
    return from_json(j, base);
}

Model model_for(const ExperimentConfig& cfg) { return Model(cfg.model_spec(), cfg.training_anatomies(), cfg.seed); }

struct Paths {
    std::filesystem::path dir;
    std::filesystem::path metrics() const { return dir / "metrics.csv"; }
    std::filesystem::path last() const { return dir / "last.ckpt"; }
    std::filesystem::path best() const { return dir / "best.ckpt"; }
};

json state_json(const TrainState& s, const std::string& hash, const std::string& kind)
{
    return {{"kind", kind},
            {"epoch", s.epoch},
            {"global_step", s.global_step},
            {"best_val_psnr", s.best_val_psnr},
            {"best_epoch", s.best_epoch},
            {"config_hash", hash}};
}

void save_state(const std::filesystem::path& path, const Model& model, const TrainState& state,
                const ExperimentConfig& cfg, const std::string& kind)
{
    Checkpoint ck;
    ck.config = canonical_json(cfg);
    ck.metadata = state_json(state, config_hash(cfg), kind).dump();
    ck.tensors = snapshot_tensors(model);
    ck.adam = state.adam.slots();
    save_checkpoint(path, ck);
}

std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::vector<std::string> lines;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

json metrics_json(const std::vector<AnatomyMetrics>& ms)
{
    json arr = json::array();
    for (const auto& m : ms) {
        arr.push_back({{"label", m.label},
                       {"count", m.count},
                       {"psnr", m.psnr},
                       {"psnr_std", m.psnr_std},
                       {"ssim", m.ssim},
                       {"ssim_std", m.ssim_std},
                       {"loss", m.loss}});
    }
    return arr;
}

}  // namespace

Model load_run_model(const std::filesystem::path& run_dir, const std::string& which)
{
    const Checkpoint ck = load_checkpoint(run_dir / which);
    const ExperimentConfig cfg = config_from_checkpoint(ck);
    Model model = model_for(cfg);
    restore_tensors(model, ck.tensors);
    return model;
}

RunResult run_regime(const ExperimentConfig& config, const RunOptions& options)
{
    auto log = [&](const std::string& msg) {
        if (options.log) options.log(msg);
    };
    RunSetup setup = prepare_run(config);
    const ExperimentConfig& cfg = setup.config;
    const std::string hash = config_hash(cfg);
    const Paths paths{cfg.output_dir};
    std::filesystem::create_directories(paths.dir);

    Model model = model_for(cfg);
    model.check_extent(cfg.data.height, cfg.data.width);
    TrainState state;
    state.adam = Adam(AdamOptions{cfg.schedule.lr});

    bool resumed = false;
    if (options.resume && std::filesystem::exists(paths.last())) {
        const Checkpoint ck = load_checkpoint(paths.last());
        const json meta = json::parse(ck.metadata);
        if (meta.at("config_hash").get<std::string>() != hash) {
            throw ConfigError("cannot resume: " + paths.last().string() + " was written by config " +
                              meta.at("config_hash").get<std::string>() + ", current config is " + hash);
        }
        restore_tensors(model, ck.tensors);
        state.adam.slots() = ck.adam;
        state.epoch = meta.at("epoch").get<int>();
        state.global_step = meta.at("global_step").get<std::int64_t>();
        state.best_val_psnr = meta.at("best_val_psnr").get<double>();
        state.best_epoch = meta.at("best_epoch").get<int>();
        resumed = true;
        log("resumed " + paths.dir.string() + " at epoch " + std::to_string(state.epoch));
    } else if (cfg.regime == Regime::mapn && !cfg.cold_start) {
        if (!std::filesystem::exists(cfg.warm_start)) {
            throw ConfigError("warm_start: MAON checkpoint '" + cfg.warm_start + "' does not exist");
        }
        const auto loaded = warm_start(model, load_run_checkpoint(cfg.warm_start));
        log("warm start from " + cfg.warm_start + ": " + std::to_string(loaded.size()) + " tensors");
    }

    {
        std::ofstream out(paths.dir / "config.json");
        json snap = to_json(cfg);
        snap["config_hash"] = hash;
        out << snap.dump(2) << "\n";
    }
    {
        std::ofstream out(paths.dir / "masks.txt");
        for (std::size_t a = 0; a < setup.val_masks.size(); ++a) {
            if (!cfg.mask.resample_per_epoch) {
                out << cfg.anatomies[a] << " train " << setup.train_mask(static_cast<int>(a), 0).serialize() << "\n";
            }
            out << cfg.anatomies[a] << " val " << setup.val_masks[a].serialize() << "\n";
        }
    }
    if (!setup.skips.empty()) {
        std::ofstream out(paths.dir / "skips.txt");
        for (const auto& s : setup.skips.entries) out << s << "\n";
    }

    // metrics.csv holds exactly the completed epochs; rows past a resumed checkpoint are dropped.
    {
        auto lines = resumed ? read_lines(paths.metrics()) : std::vector<std::string>{};
        std::ofstream out(paths.metrics(), std::ios::trunc);
        out << "epoch,anatomy,split,psnr,ssim,loss\n";
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const int epoch = std::stoi(lines[i].substr(0, lines[i].find(',')));
            if (epoch < state.epoch) out << lines[i] << "\n";
        }
    }

    std::vector<PlanSource> sources;
    for (int idx : setup.trained) {
        sources.push_back({idx, static_cast<std::int64_t>(setup.corpus.anatomies[static_cast<std::size_t>(idx)].train.size())});
    }

    const int total_epochs = cfg.epochs();
    const int warmup = cfg.warmup_epochs();
    const int stop = options.stop_after_epochs >= 0 ? std::min(total_epochs, options.stop_after_epochs) : total_epochs;
    while (state.epoch < stop) {
        const int epoch = state.epoch;
        const bool freeze = epoch < warmup;
        if (epoch == warmup && warmup > 0 && cfg.schedule.reset_moments_after_warmup) {
            state.adam.slots().clear();
            log("adam moments reset at end of warm-up");
        }
        const BatchPlan plan = make_epoch_plan(sources, cfg.schedule.batch_size,
                                               derive_seed(cfg.seed, "data", {static_cast<std::uint64_t>(epoch)}),
                                               cfg.regime, cfg.data.truncate_to_min);
        std::map<int, std::vector<double>> losses, psnrs, ssims;
        std::map<int, kspace::SamplingMask> masks;
        for (int idx : setup.trained) masks.emplace(idx, setup.train_mask(idx, epoch));
        for (std::size_t b = 0; b < plan.batches.size(); ++b) {
            const Batch& batch = plan.batches[b];
            const auto& data = setup.corpus.anatomies[static_cast<std::size_t>(batch.anatomy)].train;
            std::vector<const Slice*> slices;
            for (auto i : batch.indices) slices.push_back(&data[static_cast<std::size_t>(i)]);
            StepOptions so;
            so.freeze_shared_conv3x3 = freeze;
            so.batch_id = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + " step " +
                          std::to_string(state.global_step);
            StepResult r;
            try {
                r = train_step(model, state.adam, slices, setup.model_anatomy(batch.anatomy), masks.at(batch.anatomy), so);
            } catch (const NumericError&) {
                json dump = {{"epoch", epoch},
                             {"batch", b},
                             {"global_step", state.global_step},
                             {"anatomy", cfg.anatomies[static_cast<std::size_t>(batch.anatomy)]},
                             {"slices", batch.indices}};
                std::ofstream(paths.dir / "failure.json") << dump.dump(2) << "\n";
                throw;
            }
            ++state.global_step;
            losses[batch.anatomy].push_back(r.loss);
            psnrs[batch.anatomy].insert(psnrs[batch.anatomy].end(), r.psnr.begin(), r.psnr.end());
            ssims[batch.anatomy].insert(ssims[batch.anatomy].end(), r.ssim.begin(), r.ssim.end());
        }
        ++state.epoch;

        std::vector<AnatomyMetrics> val;
        for (int idx : setup.trained) {
            val.push_back(evaluate(model, setup.corpus.anatomies[static_cast<std::size_t>(idx)].val,
                                   setup.val_masks[static_cast<std::size_t>(idx)], setup.model_anatomy(idx),
                                   cfg.schedule.batch_size));
        }
        {
            std::ofstream out(paths.metrics(), std::ios::app);
            for (int idx : setup.trained) {
                out << epoch << ',' << cfg.anatomies[static_cast<std::size_t>(idx)] << ",train," << fmt(mean_of(psnrs[idx]))
                    << ',' << fmt(mean_of(ssims[idx])) << ',' << fmt(mean_of(losses[idx])) << "\n";
            }
            for (const auto& m : val) {
                out << epoch << ',' << m.label << ",val," << fmt(m.psnr) << ',' << fmt(m.ssim) << ',' << fmt(m.loss) << "\n";
            }
        }
        double mean_psnr = 0.0;
        for (const auto& m : val) mean_psnr += m.psnr / static_cast<double>(val.size());
        std::string line = "epoch " + std::to_string(epoch + 1) + "/" + std::to_string(total_epochs) +
                           (freeze ? " (warm-up)" : "") + " val psnr";
        for (const auto& m : val) {
            char buf[64];
            std::snprintf(buf, sizeof buf, " %s=%.2f", m.label.c_str(), m.psnr);
            line += buf;
        }
        log(line);
        if (mean_psnr > state.best_val_psnr) {
            state.best_val_psnr = mean_psnr;
            state.best_epoch = epoch;
            save_state(paths.best(), model, state, cfg, "best");
        }
        const bool periodic = cfg.schedule.checkpoint_every > 0 && state.epoch % cfg.schedule.checkpoint_every == 0;
        if (periodic || state.epoch == stop) save_state(paths.last(), model, state, cfg, "last");
    }

    RunResult result;
    result.dir = paths.dir;
    result.config_hash = hash;
    result.epochs_completed = state.epoch;
    result.best_epoch = state.best_epoch;
    if (state.epoch < total_epochs) return result;

    Model best = load_run_model(paths.dir, "best.ckpt");
    for (std::size_t a = 0; a < cfg.anatomies.size(); ++a) {
        const int idx = static_cast<int>(a);
        if (std::find(setup.trained.begin(), setup.trained.end(), idx) == setup.trained.end()) continue;
        result.eval.push_back(evaluate(best, setup.corpus.anatomies[a].val, setup.val_masks[a], setup.model_anatomy(idx),
                                       cfg.schedule.batch_size));
    }
    std::vector<AnatomyMetrics> zero_filled;
    for (int idx : setup.trained) {
        zero_filled.push_back(evaluate_zero_filled(setup.corpus.anatomies[static_cast<std::size_t>(idx)].val,
                                                   setup.val_masks[static_cast<std::size_t>(idx)]));
    }
    json summary = {{"config_hash", hash},
                    {"regime", to_string(cfg.regime)},
                    {"net", to_string(cfg.model.net)},
                    {"pn", to_string(cfg.model.pn)},
                    {"shared_learners", cfg.model.shared_learners},
                    {"training_anatomies", cfg.training_anatomies()},
                    {"acceleration", cfg.mask.acceleration},
                    {"center_fraction", cfg.mask.effective_center_fraction()},
                    {"seed", cfg.seed},
                    {"val_fingerprint", validation_fingerprint(setup.corpus)},
                    {"best_epoch", state.best_epoch},
                    {"epochs", state.epoch},
                    {"parameters", partition_report(model).total},
                    {"eval", metrics_json(result.eval)},
                    {"zero_filled", metrics_json(zero_filled)}};
    std::ofstream(paths.dir / "summary.json") << summary.dump(2) << "\n";
    return result;
}

}  // namespace mapn
