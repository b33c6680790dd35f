#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mapn/checkpoint.hpp"
#include "mapn/error.hpp"
#include "mapn/models.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace mapn {
namespace {

const std::vector<std::string> kAnatomies{"knee", "brain", "cardiac"};

kspace::ComplexImage random_image(std::int64_t n, std::uint64_t seed)
{
    kspace::ComplexImage x(n, n);
    Rng rng(seed);
    for (double& v : x.real) v = rng.normal();
    return x;
}

std::vector<kspace::ComplexImage> measurements(const kspace::SamplingMask& mask, int count, std::uint64_t seed)
{
    std::vector<kspace::ComplexImage> out;
    for (int i = 0; i < count; ++i) out.push_back(kspace::undersample(random_image(mask.width(), seed + i), mask));
    return out;
}

double max_abs_diff(const std::vector<kspace::ComplexImage>& a, const std::vector<kspace::ComplexImage>& b)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < a[k].size(); ++i) {
            worst = std::max({worst, std::abs(a[k].real[i] - b[k].real[i]), std::abs(a[k].imag[i] - b[k].imag[i])});
        }
    }
    return worst;
}

void fill(Tensor& t, Rng& rng, double scale = 0.3)
{
    for (double& v : t.data()) v = rng.uniform(-scale, scale);
}

// --- registry and anatomy switch -------------------------------------------------

TEST(Registry, RejectsBadLabelsAndIndices)
{
    EXPECT_THROW(ParamRegistry(std::vector<std::string>{}), ConfigError);
    EXPECT_THROW(ParamRegistry(std::vector<std::string>{"knee", "knee"}), ConfigError);
    ParamRegistry reg(kAnatomies);
    EXPECT_THROW(reg.switch_anatomy(3), ConfigError);
    EXPECT_THROW(reg.switch_anatomy(-1), ConfigError);
    reg.switch_anatomy(2);
    EXPECT_EQ(reg.active().label, "cardiac");
}

TEST(Registry, SpecificSetsAreIndependentCopies)
{
    ParamRegistry reg(kAnatomies);
    reg.add_shared("w", ParamRole::conv3x3, Tensor({2}, 1.0));
    reg.add_specific("g", ParamRole::bn_gamma, Tensor({2}, 1.0));
    reg.switch_anatomy(1);
    reg.lookup("g").value[0] = 5.0;
    EXPECT_EQ(reg.find_specific("g", 0)->value[0], 1.0);
    EXPECT_EQ(reg.find_specific("g", 1)->value[0], 5.0);
    EXPECT_EQ(reg.find_specific("g", 1)->key, "g@brain");
    EXPECT_EQ(reg.find_specific("g", 1)->partition, "specific:brain");
    EXPECT_EQ(&reg.lookup("w"), reg.find_shared("w"));
    EXPECT_THROW(reg.add_specific("w", ParamRole::conv3x3, Tensor({2})), ConfigError);
    EXPECT_EQ(reg.shared_count(), 2);
    EXPECT_EQ(reg.specific_count(), 2);
    EXPECT_EQ(reg.total_count(), 8);
}

TEST(AnatomySwitch, Pn0OutputsIgnoreTheActiveAnatomy)
{
    Model model(desk_dccnn_spec(PnKind::pn0), kAnatomies, 3);
    EXPECT_EQ(model.registry().specific_count(), 0);
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.125, 1);
    const auto s = measurements(mask, 2, 10);
    const auto y0 = model.reconstruct(s, mask, 0);
    EXPECT_EQ(model.reconstruct(s, mask, 1), y0);
    EXPECT_EQ(model.reconstruct(s, mask, 2), y0);
}

TEST(AnatomySwitch, SelectsTheAnatomySpecificLearners)
{
    Model model(desk_dccnn_spec(PnKind::pn4), kAnatomies, 3);
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.125, 1);
    const auto s = measurements(mask, 2, 20);
    const auto base0 = model.reconstruct(s, mask, 0);
    EXPECT_EQ(model.reconstruct(s, mask, 0), base0);      // idempotent switch
    EXPECT_EQ(model.reconstruct(s, mask, 1), base0);      // identical learners so far
    Rng rng(5);
    fill(model.registry().find_specific("c0.b1.adapter1x1", 1)->value, rng);
    const auto y1 = model.reconstruct(s, mask, 1);
    EXPECT_GT(max_abs_diff(y1, base0), 1e-6);
    EXPECT_EQ(model.reconstruct(s, mask, 0), base0);
    EXPECT_EQ(model.reconstruct(s, mask, 2), base0);
}

// --- block topologies ---------------------------------------------------------------

struct BlockRig {
    ParamRegistry reg{kAnatomies};
    PnBlock block;
    BlockRig(PnKind kind, std::int64_t cin, std::int64_t cout, std::uint64_t seed)
      : block(make(kind, cin, cout, seed))
    {
    }
    PnBlock make(PnKind kind, std::int64_t cin, std::int64_t cout, std::uint64_t seed)
    {
        Rng rng(seed);
        return PnBlock("blk", BlockSpec{kind, cin, cout}, BlockOptions{}, reg, rng);
    }
    Tensor run(const Tensor& x, int anatomy, ops::Mode mode = ops::Mode::train)
    {
        reg.switch_anatomy(anatomy);
        Graph g;
        ForwardContext ctx{g, reg, mode};
        return block.forward(ctx, g.constant(x)).value();
    }
    void copy_common_from(BlockRig& other)
    {
        reg.find_shared("blk.conv3x3")->value = other.reg.find_shared("blk.conv3x3")->value;
        for (int a = 0; a < 3; ++a) {
            for (const char* f : {"blk.bn.gamma", "blk.bn.beta"}) reg.find_specific(f, a)->value = other.reg.find_specific(f, a)->value;
        }
    }
};

Tensor random_input(Shape s, std::uint64_t seed)
{
    Rng rng(seed);
    return testing::random_tensor(std::move(s), rng);
}

TEST(PnBlock, ParallelLearnerWithZeroWeightsEqualsPn1)
{
    BlockRig pn1(PnKind::pn1, 3, 5, 1), pn4(PnKind::pn4, 3, 5, 2);
    pn4.copy_common_from(pn1);
    const Tensor x = random_input({2, 3, 6, 6}, 3);
    EXPECT_EQ(pn4.run(x, 1), pn1.run(x, 1));  // adapters start at zero
    Rng rng(4);
    fill(pn4.reg.find_specific("blk.adapter1x1", 1)->value, rng);
    EXPECT_NE(pn4.run(x, 1), pn1.run(x, 1));
    pn4.reg.find_specific("blk.adapter1x1", 1)->value.fill(0.0);
    const Tensor a = pn4.run(x, 1), b = pn1.run(x, 1);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(PnBlock, SeriesLearnerWithZeroWeightsEqualsPn1)
{
    BlockRig pn1(PnKind::pn1, 4, 4, 1), pn3(PnKind::pn3, 4, 4, 2);
    pn3.copy_common_from(pn1);
    EXPECT_EQ(pn3.reg.find_specific("blk.adapter1x1", 0)->value.shape(), (Shape{4, 4, 1, 1}));
    const Tensor x = random_input({2, 4, 5, 5}, 3);
    EXPECT_EQ(pn3.run(x, 2), pn1.run(x, 2));
}

TEST(PnBlock, ZeroExcitationHalvesThePn1Response)
{
    BlockRig pn1(PnKind::pn1, 3, 6, 1), pn2(PnKind::pn2, 3, 6, 2);
    pn2.copy_common_from(pn1);
    pn2.reg.find_specific("blk.se.fc1", 0)->value.fill(0.0);
    pn2.reg.find_specific("blk.se.fc2", 0)->value.fill(0.0);
    const Tensor x = random_input({2, 3, 5, 5}, 3);
    const Tensor a = pn2.run(x, 0), b = pn1.run(x, 0);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], 0.5 * b[i], 1e-14);
}

TEST(PnBlock, Pn0OwnsNoSpecificTensors)
{
    BlockRig pn0(PnKind::pn0, 2, 8, 1);
    EXPECT_EQ(pn0.reg.specific_count(), 0);
    EXPECT_EQ(pn0.reg.shared_count(), 8 * 2 * 9 + 4 * 8);
}

TEST(PnBlock, PluggingLearnersNeverChangesSharedShapes)
{
    std::map<std::string, Shape> reference;
    const Model base(paper_dccnn_spec(PnKind::pn0), kAnatomies, 1);
    for (const auto& [name, p] : base.registry().shared()) {
        if (p.role == ParamRole::conv3x3) reference[name] = p.value.shape();
    }
    for (PnKind pn : {PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        const Model paper(paper_dccnn_spec(pn), kAnatomies, 1);
        std::map<std::string, Shape> shapes;
        for (const auto& [name, p] : paper.registry().shared()) {
            if (p.role == ParamRole::conv3x3) shapes[name] = p.value.shape();
        }
        EXPECT_EQ(shapes, reference) << to_string(pn);
    }
}

TEST(PnBlock, RejectsWrongChannelCount)
{
    BlockRig pn4(PnKind::pn4, 3, 5, 1);
    EXPECT_THROW(pn4.run(random_input({1, 4, 4, 4}, 1), 0), ConfigError);
}

// --- gradient flow --------------------------------------------------------------------

TEST(GradientIsolation, OnlyTheActiveAnatomyReceivesGradients)
{
    for (PnKind pn : {PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        Model model(desk_dccnn_spec(pn), kAnatomies, 7);
        Rng rng(1);
        for (int a = 0; a < 3; ++a) {
            for (auto& [name, p] : model.registry().specific(a)) {
                if (p.role == ParamRole::conv1x1) fill(p.value, rng, 0.1);
            }
        }
        const auto mask = kspace::make_cartesian_mask(32, 4, 0.125, 2);
        const auto s = measurements(mask, 2, 30);
        model.switch_anatomy(1);
        Graph g;
        ForwardContext ctx{g, model.registry()};
        const Var y = model.forward(ctx, s, mask);
        const Var target = g.constant(random_input(y.shape(), 31));
        const Gradients grads = g.backward(ops::l1_loss(y, target));
        bool shared_nonzero = false;
        for (const auto& [key, pg] : grads) {
            EXPECT_TRUE(pg.param->partition == "shared" || pg.param->partition == "specific:brain") << key;
            if (pg.param->partition == "shared") {
                for (double v : pg.grad.data()) shared_nonzero = shared_nonzero || v != 0.0;
            }
        }
        EXPECT_TRUE(shared_nonzero);
        for (const auto& [name, p] : model.registry().specific(1)) {
            if (p.trainable()) EXPECT_TRUE(grads.count(p.key)) << p.key;
        }
    }
}

TEST(GradientIsolation, WarmUpFreezesSharedConvolutions)
{
    Model model(desk_dccnn_spec(PnKind::pn4), kAnatomies, 7);
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.125, 2);
    const auto s = measurements(mask, 1, 40);
    Graph g;
    ForwardContext ctx{g, model.registry(), ops::Mode::train, true};
    const Var y = model.forward(ctx, s, mask);
    const Gradients grads = g.backward(ops::l1_loss(y, g.constant(random_input(y.shape(), 41))));
    for (const auto& [key, pg] : grads) EXPECT_NE(pg.param->role, ParamRole::conv3x3) << key;
    EXPECT_FALSE(grads.empty());
}

TEST(GradientCheck, BlocksDifferentiateThroughTheirInput)
{
    for (PnKind pn : {PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        BlockRig rig(pn, 3, 4, 11);
        Rng rng(2);
        for (auto& [name, p] : rig.reg.specific(0)) {
            if (p.role == ParamRole::conv1x1) fill(p.value, rng);
        }
        const double err = testing::gradcheck(
            [&](Graph& g, const std::vector<Var>& v) {
                ForwardContext ctx{g, rig.reg, ops::Mode::eval};
                return rig.block.forward(ctx, v[0]);
            },
            {random_input({2, 3, 5, 5}, 3)}, {true});
        EXPECT_LT(err, 1e-6) << to_string(pn);
    }
}

// --- assembled networks -----------------------------------------------------------------

TEST(Dccnn, OutputHonoursMeasurementsForRandomWeights)
{
    for (int acc : {4, 6}) {
        for (PnKind pn : {PnKind::pn0, PnKind::pn2, PnKind::pn4}) {
            Model model(desk_dccnn_spec(pn), kAnatomies, static_cast<std::uint64_t>(acc) * 10 + static_cast<int>(pn));
            const auto mask = kspace::make_cartesian_mask(64, acc, kspace::default_center_fraction(acc), 9);
            const auto s = measurements(mask, 2, 60);
            const auto y = model.reconstruct(s, mask, 1, ops::Mode::train);
            for (std::size_t b = 0; b < s.size(); ++b) {
                const auto k = kspace::fft2(y[b]);
                double num = 0.0, den = 0.0;
                for (std::int64_t r = 0; r < 64; ++r) {
                    for (std::int64_t c = 0; c < 64; ++c) {
                        if (!mask.columns[c]) continue;
                        const auto i = static_cast<std::size_t>(r * 64 + c);
                        num += std::norm(std::complex<double>(k.real[i] - s[b].real[i], k.imag[i] - s[b].imag[i]));
                        den += std::norm(std::complex<double>(s[b].real[i], s[b].imag[i]));
                    }
                }
                EXPECT_LE(std::sqrt(num / den), 1e-9);
            }
        }
    }
}

TEST(Dccnn, ZeroWeightsReturnTheZeroFilledImage)
{
    Model model(desk_dccnn_spec(PnKind::pn4), kAnatomies, 1);
    model.registry().for_each([](Parameter& p) {
        if (p.role == ParamRole::conv3x3) p.value.fill(0.0);
    });
    const auto mask = kspace::make_cartesian_mask(32, 4, 0.125, 3);
    const auto s = measurements(mask, 2, 70);
    std::vector<kspace::ComplexImage> zf;
    for (const auto& m : s) zf.push_back(kspace::ifft2(m));
    EXPECT_LE(max_abs_diff(model.reconstruct(s, mask, 0, ops::Mode::train), zf), 1e-12);
    EXPECT_LE(max_abs_diff(model.reconstruct(s, mask, 2, ops::Mode::eval), zf), 1e-12);
}

TEST(Networks, PreserveShapeAndProduceFiniteVaryingOutput)
{
    const auto mask = kspace::make_cartesian_mask(64, 4, 0.08, 4);
    const auto s = measurements(mask, 2, 80);
    for (NetKind net : {NetKind::dccnn, NetKind::unet}) {
        for (PnKind pn : {PnKind::pn0, PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
            Model model(net == NetKind::dccnn ? desk_dccnn_spec(pn) : desk_unet_spec(pn), kAnatomies, 2);
            Graph g;
            ForwardContext ctx{g, model.registry()};
            const Tensor y = model.forward(ctx, s, mask).value();
            EXPECT_EQ(y.shape(), (Shape{2, 2, 64, 64})) << to_string(net) << " " << to_string(pn);
            EXPECT_TRUE(y.all_finite());
            const auto [lo, hi] = std::minmax_element(y.data().begin(), y.data().end());
            EXPECT_LT(*lo, *hi);
        }
    }
}

TEST(Networks, UnetRejectsIndivisibleExtents)
{
    Model model(desk_unet_spec(PnKind::pn0), kAnatomies, 1);
    EXPECT_THROW(model.check_extent(8, 8), ConfigError);
    EXPECT_NO_THROW(model.check_extent(32, 32));
}

TEST(Networks, SpecificNameSetsMatchAcrossAnatomies)
{
    Model model(desk_unet_spec(PnKind::pn4), kAnatomies, 1);
    std::vector<std::string> names0;
    for (const auto& [n, p] : model.registry().specific(0)) names0.push_back(n);
    EXPECT_FALSE(names0.empty());
    for (int a = 1; a < 3; ++a) {
        std::vector<std::string> names;
        for (const auto& [n, p] : model.registry().specific(a)) {
            names.push_back(n);
            EXPECT_EQ(p.value.shape(), model.registry().specific(0).at(n).value.shape());
        }
        EXPECT_EQ(names, names0);
    }
    EXPECT_NO_THROW(model.registry().census());
}

TEST(Networks, InitialisationIsDeterministicPerSeed)
{
    const auto a = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn2), kAnatomies, 11));
    const auto b = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn2), kAnatomies, 11));
    const auto c = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn2), kAnatomies, 12));
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

// --- parameter accounting ----------------------------------------------------------------

TEST(Accounting, FullScaleMatchesLayerwiseFormula)
{
    const auto k = testing::dccnn_counts(5, 5, 64);
    const auto report = [](PnKind pn, bool shared = false) {
        return partition_report(Model(paper_dccnn_spec(pn, shared), kAnatomies, 0));
    };
    const auto pn0 = report(PnKind::pn0);
    EXPECT_EQ(pn0.shared_count, k.conv3x3 + k.bn);
    EXPECT_EQ(pn0.specific_count_per_anatomy, 0);
    EXPECT_EQ(pn0.total, 569640);

    const auto pn1 = report(PnKind::pn1);
    EXPECT_EQ(pn1.shared_count, k.conv3x3);
    EXPECT_EQ(pn1.specific_count_per_anatomy, k.bn);
    const auto pn2 = report(PnKind::pn2);
    EXPECT_EQ(pn2.specific_count_per_anatomy, k.bn + k.se);
    const auto pn3 = report(PnKind::pn3);
    EXPECT_EQ(pn3.specific_count_per_anatomy, k.bn + k.series);
    const auto pn4 = report(PnKind::pn4);
    EXPECT_EQ(pn4.specific_count_per_anatomy, k.bn + k.parallel);
    const auto maon_pn4 = report(PnKind::pn4, true);
    EXPECT_EQ(maon_pn4.shared_count, k.conv3x3 + k.bn + 3 * k.parallel);
    EXPECT_EQ(maon_pn4.specific_count_per_anatomy, 0);

    for (const auto& r : {pn1, pn2, pn3, pn4}) {
        EXPECT_EQ(r.total, r.shared_count + 3 * r.specific_count_per_anatomy);
        EXPECT_LE(static_cast<double>(r.specific_count_per_anatomy), 0.16 * static_cast<double>(r.shared_count));
    }
}

TEST(Accounting, DeskScaleMatchesLayerwiseFormula)
{
    const auto k = testing::dccnn_counts(2, 3, 16);
    const auto r = partition_report(Model(desk_dccnn_spec(PnKind::pn2), kAnatomies, 0));
    EXPECT_EQ(r.shared_count, k.conv3x3);
    EXPECT_EQ(r.specific_count_per_anatomy, k.bn + k.se);
}

// --- checkpoints --------------------------------------------------------------------------

class CheckpointTest : public ::testing::Test {
protected:
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "mapn_ckpt_test";
    void SetUp() override { std::filesystem::create_directories(dir); }
    void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact)
{
    Model model(desk_dccnn_spec(PnKind::pn4), kAnatomies, 3);
    Rng rng(9);
    model.registry().for_each([&](Parameter& p) { fill(p.value, rng); });
    Checkpoint ck;
    ck.config = "{\"seed\":3}";
    ck.metadata = "meta";
    ck.tensors = snapshot_tensors(model);
    AdamSlot slot;
    slot.step = 4;
    slot.m = Tensor({2}, 0.1 + 0.2);
    slot.v = Tensor({2}, 1.0 / 3.0);
    ck.adam["c0.b0.conv3x3"] = slot;
    save_checkpoint(dir / "a.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.metadata, ck.metadata);
    EXPECT_EQ(back.tensors, ck.tensors);
    ASSERT_EQ(back.adam.size(), 1u);
    EXPECT_EQ(back.adam.at("c0.b0.conv3x3").step, 4);
    EXPECT_EQ(back.adam.at("c0.b0.conv3x3").m, slot.m);
    EXPECT_EQ(back.adam.at("c0.b0.conv3x3").v, slot.v);

    Model fresh(desk_dccnn_spec(PnKind::pn4), kAnatomies, 99);
    restore_tensors(fresh, back.tensors);
    EXPECT_EQ(snapshot_tensors(fresh), ck.tensors);
}

TEST_F(CheckpointTest, PartitionTagsAreRecorded)
{
    const auto records = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn1), kAnatomies, 3));
    int specific = 0;
    for (const auto& r : records) {
        if (r.partition == "specific:cardiac") {
            ++specific;
            EXPECT_NE(r.key.find("@cardiac"), std::string::npos);
        }
    }
    EXPECT_EQ(specific, 2 * 3 * 4);
}

TEST_F(CheckpointTest, CorruptionAndMismatchAreReported)
{
    Checkpoint ck;
    ck.tensors = snapshot_tensors(Model(desk_dccnn_spec(PnKind::pn0), kAnatomies, 3));
    save_checkpoint(dir / "b.ckpt", ck);
    {
        std::fstream f(dir / "b.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(200);
        f.put('\x7f');
    }
    EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), DataError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);

    ModelSpec wide = desk_dccnn_spec(PnKind::pn0);
    wide.dccnn.channels = 8;
    Model other(wide, kAnatomies, 3);
    try {
        restore_tensors(other, ck.tensors);
        FAIL() << "expected a shape diff";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("c0.b0.conv3x3"), std::string::npos);
    }
}

}  // namespace
}  // namespace mapn
