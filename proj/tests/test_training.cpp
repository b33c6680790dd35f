#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mapn/error.hpp"
#include "mapn/metrics.hpp"
#include "mapn/training.hpp"

namespace mapn {
namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kAnatomies{"knee", "brain", "cardiac"};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelSpec tiny_spec(PnKind pn)
{
    ModelSpec spec = desk_dccnn_spec(pn);
    spec.dccnn.channels = 6;
    return spec;
}

ExperimentConfig tiny_config(Regime regime, PnKind pn, const fs::path& out)
{
    ExperimentConfig cfg = desk_preset();
    cfg.regime = regime;
    cfg.model.pn = pn;
    cfg.model.channels = 6;
    cfg.data.height = 32;
    cfg.data.width = 32;
    cfg.data.train_per_anatomy = 4;
    cfg.data.val_per_anatomy = 2;
    cfg.schedule.batch_size = 2;
    cfg.schedule.epochs = 4;
    cfg.schedule.warmup_epochs = regime == Regime::mapn ? 1 : 0;
    cfg.cold_start = regime == Regime::mapn;
    cfg.output_dir = out.string();
    return cfg;
}

std::vector<Slice> phantom_slices(int anatomy, int count, std::uint64_t seed)
{
    return generate_phantoms(default_profile(kAnatomies[static_cast<std::size_t>(anatomy)]),
                             AnatomyId{anatomy, kAnatomies[static_cast<std::size_t>(anatomy)]}, count, 32, 32, seed);
}

std::vector<const Slice*> pointers(const std::vector<Slice>& slices)
{
    std::vector<const Slice*> out;
    for (const auto& s : slices) out.push_back(&s);
    return out;
}

std::map<std::string, Tensor> tensors_by_key(const Model& m)
{
    std::map<std::string, Tensor> out;
    for (const auto& r : snapshot_tensors(m)) out[r.key] = r.value;
    return out;
}

class RunDir : public ::testing::Test {
protected:
    fs::path dir;
    void SetUp() override
    {
        dir = fs::temp_directory_path() / ("mapn_train_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
};

TEST(TrainStep, WarmUpLeavesSharedConvolutionsBitwiseUnchanged)
{
    Model model(tiny_spec(PnKind::pn4), kAnatomies, 1);
    Adam adam(AdamOptions{0.01});
    const auto slices = phantom_slices(1, 2, 3);
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.08, 1);
    const auto before = tensors_by_key(model);
    StepOptions opts;
    opts.freeze_shared_conv3x3 = true;
    for (int i = 0; i < 3; ++i) train_step(model, adam, pointers(slices), 1, mask, opts);
    const auto after = tensors_by_key(model);
    bool adapters_moved = false;
    for (const auto& p : snapshot_tensors(model)) {
        if (p.role == ParamRole::conv3x3) EXPECT_EQ(after.at(p.key), before.at(p.key)) << p.key;
        if (p.role == ParamRole::conv1x1 && p.partition == "specific:brain") {
            adapters_moved = adapters_moved || after.at(p.key) != before.at(p.key);
        }
    }
    EXPECT_TRUE(adapters_moved);
}

TEST(TrainStep, OtherAnatomiesAreBitwiseUntouched)
{
    for (PnKind pn : {PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        Model model(tiny_spec(pn), kAnatomies, 2);
        Adam adam(AdamOptions{0.01});
        const auto mask = kspace::make_cartesian_mask(32, 4, 0.08, 2);
        const auto knee = phantom_slices(0, 2, 4);
        train_step(model, adam, pointers(knee), 0, mask);  // gives anatomy 0 Adam state
        const auto before = tensors_by_key(model);
        const auto slices = phantom_slices(2, 2, 5);
        for (int i = 0; i < 2; ++i) train_step(model, adam, pointers(slices), 2, mask);
        const auto after = tensors_by_key(model);
        bool cardiac_moved = false, shared_moved = false;
        for (const auto& p : snapshot_tensors(model)) {
            const bool changed = after.at(p.key) != before.at(p.key);
            if (p.partition == "specific:knee" || p.partition == "specific:brain") EXPECT_FALSE(changed) << p.key;
            if (p.partition == "specific:cardiac") cardiac_moved = cardiac_moved || changed;
            if (p.partition == "shared") shared_moved = shared_moved || changed;
        }
        EXPECT_TRUE(cardiac_moved) << to_string(pn);
        EXPECT_TRUE(shared_moved) << to_string(pn);
    }
}

TEST(TrainStep, RepeatedStepsReduceTheLoss)
{
    Model model(tiny_spec(PnKind::pn0), kAnatomies, 3);
    Adam adam(AdamOptions{0.01});
    const auto slices = phantom_slices(0, 2, 6);
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.08, 3);
    const double first = train_step(model, adam, pointers(slices), 0, mask).loss;
    double last = first;
    for (int i = 0; i < 40; ++i) last = train_step(model, adam, pointers(slices), 0, mask).loss;
    EXPECT_LT(last, 0.8 * first);
}

TEST(TrainStep, NonFiniteLossNamesTheBatch)
{
    Model model(tiny_spec(PnKind::pn0), kAnatomies, 3);
    Adam adam;
    auto slices = phantom_slices(0, 1, 6);
    slices[0].image.real[5] = std::numeric_limits<double>::quiet_NaN();
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.08, 3);
    StepOptions opts;
    opts.batch_id = "epoch 3 batch 7";
    try {
        train_step(model, adam, pointers(slices), 0, mask, opts);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 3 batch 7"), std::string::npos) << e.what();
    }
}

TEST(Evaluation, ZeroFilledDegradesWithAcceleration)
{
    const auto slices = phantom_slices(1, 6, 7);
    const auto m4 = evaluate_zero_filled(slices, kspace::make_cartesian_mask(32, 4, kspace::default_center_fraction(4), 1));
    const auto m6 = evaluate_zero_filled(slices, kspace::make_cartesian_mask(32, 6, kspace::default_center_fraction(6), 1));
    EXPECT_EQ(m4.count, 6);
    EXPECT_EQ(m4.label, "brain");
    EXPECT_LE(m6.psnr, m4.psnr);
    EXPECT_LE(m6.ssim, m4.ssim);
    const auto full = evaluate_zero_filled(slices, kspace::make_cartesian_mask(32, 1, 1.0, 1));
    EXPECT_EQ(full.psnr, metrics::kPsnrCap);
}

TEST(Evaluation, DeltaAgainstItselfIsZero)
{
    const auto slices = phantom_slices(0, 3, 8);
    const auto m = evaluate_zero_filled(slices, kspace::make_cartesian_mask(32, 4, 0.08, 2));
    const auto d = delta({m}, {m});
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].psnr, 0.0);
    EXPECT_EQ(d[0].ssim, 0.0);
    AnatomyMetrics other = m;
    other.label = "liver";
    EXPECT_THROW(delta({m}, {other}), DataError);
}

TEST(WarmStart, ZeroAdaptersReproduceTheMultiAnatomyNetwork)
{
    Model maon(tiny_spec(PnKind::pn0), kAnatomies, 4);
    Adam adam;
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.08, 4);
    for (int a = 0; a < 3; ++a) train_step(maon, adam, pointers(phantom_slices(a, 2, 10 + a)), 0, mask);
    Checkpoint ck;
    ck.tensors = snapshot_tensors(maon);

    Model mapn(tiny_spec(PnKind::pn4), kAnatomies, 99);
    const auto loaded = warm_start(mapn, ck);
    EXPECT_FALSE(loaded.empty());
    for (int a = 0; a < 3; ++a) {
        std::vector<kspace::ComplexImage> s;
        for (const auto& sl : phantom_slices(a, 2, 20 + a)) s.push_back(kspace::undersample(sl.image, mask));
        const auto want = maon.reconstruct(s, mask, 0);
        const auto got = mapn.reconstruct(s, mask, a);
        double worst = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            for (std::size_t i = 0; i < want[k].size(); ++i) worst = std::max(worst, std::abs(want[k].real[i] - got[k].real[i]));
        }
        EXPECT_LE(worst, 1e-10) << kAnatomies[static_cast<std::size_t>(a)];
    }
}

TEST(WarmStart, ShapeMismatchIsAConfigError)
{
    Checkpoint ck;
    ck.tensors = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn0), kAnatomies, 1));
    Model narrow(tiny_spec(PnKind::pn4), kAnatomies, 1);
    EXPECT_THROW(warm_start(narrow, ck), ConfigError);
}

TEST_F(RunDir, MultiAnatomyAndParameterizedPn0Coincide)
{
    const auto maon = run_regime(tiny_config(Regime::maon, PnKind::pn0, dir / "maon"));
    auto cfg = tiny_config(Regime::mapn, PnKind::pn0, dir / "mapn");
    cfg.schedule.warmup_epochs = 0;
    const auto mapn = run_regime(cfg);
    ASSERT_EQ(maon.eval.size(), 3u);
    for (std::size_t a = 0; a < 3; ++a) {
        EXPECT_EQ(maon.eval[a].psnr, mapn.eval[a].psnr);
        EXPECT_EQ(maon.eval[a].ssim, mapn.eval[a].ssim);
    }
}

TEST_F(RunDir, ResumeMatchesUninterruptedTraining)
{
    auto cfg = tiny_config(Regime::mapn, PnKind::pn4, dir / "full");
    run_regime(cfg);
    auto split = cfg;
    split.output_dir = (dir / "split").string();
    RunOptions first;
    first.stop_after_epochs = 2;
    EXPECT_EQ(run_regime(split, first).epochs_completed, 2);
    RunOptions second;
    second.resume = true;
    EXPECT_EQ(run_regime(split, second).epochs_completed, 4);
    EXPECT_EQ(slurp(dir / "full" / "metrics.csv"), slurp(dir / "split" / "metrics.csv"));
    EXPECT_EQ(load_checkpoint(dir / "full" / "last.ckpt").tensors, load_checkpoint(dir / "split" / "last.ckpt").tensors);
    EXPECT_EQ(slurp(dir / "full" / "summary.json"), slurp(dir / "split" / "summary.json"));
}

TEST_F(RunDir, ResumeRefusesADifferentConfig)
{
    auto cfg = tiny_config(Regime::maon, PnKind::pn0, dir / "r");
    RunOptions first;
    first.stop_after_epochs = 1;
    run_regime(cfg, first);
    cfg.schedule.lr = 0.02;
    RunOptions again;
    again.resume = true;
    EXPECT_THROW(run_regime(cfg, again), ConfigError);
}

TEST_F(RunDir, ArtifactsAreWritten)
{
    auto cfg = tiny_config(Regime::oaon, PnKind::pn0, dir / "o");
    cfg.oaon_anatomy = "brain";
    cfg.schedule.epochs = 2;
    const auto r = run_regime(cfg);
    for (const char* f : {"config.json", "masks.txt", "metrics.csv", "best.ckpt", "last.ckpt", "summary.json"}) {
        EXPECT_TRUE(fs::exists(r.dir / f)) << f;
    }
    ASSERT_EQ(r.eval.size(), 1u);
    EXPECT_EQ(r.eval[0].label, "brain");
    const std::string metrics = slurp(r.dir / "metrics.csv");
    EXPECT_EQ(metrics.rfind("epoch,anatomy,split,psnr,ssim,loss\n", 0), 0u);
    EXPECT_NE(metrics.find("1,brain,val,"), std::string::npos);
    EXPECT_EQ(metrics.find("knee"), std::string::npos);
    const Model best = load_run_model(r.dir);
    EXPECT_EQ(best.spec().pn, PnKind::pn0);
}

TEST_F(RunDir, MissingWarmStartIsAConfigError)
{
    auto cfg = tiny_config(Regime::mapn, PnKind::pn4, dir / "w");
    cfg.cold_start = false;
    cfg.warm_start = (dir / "nope" / "best.ckpt").string();
    try {
        run_regime(cfg);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
    }
}

}  // namespace
}  // namespace mapn
