#include "mapn/models.hpp"

#include "mapn/error.hpp"

namespace mapn {

const char* to_string(NetKind kind) { return kind == NetKind::unet ? "unet" : "dccnn"; }

NetKind net_kind_from_string(std::string_view s)
{
    if (s == "unet") return NetKind::unet;
    if (s == "dccnn") return NetKind::dccnn;
    throw ConfigError("unknown network '" + std::string(s) + "' (expected unet or dccnn)");
}

namespace {

std::string unet_deconv(int level) { return "up" + std::to_string(level) + ".deconv"; }
std::string unet_deconv_bias(int level) { return "up" + std::to_string(level) + ".deconv_bias"; }

}  // namespace

Model::Model(ModelSpec spec, std::vector<std::string> anatomies, std::uint64_t seed)
  : spec_(std::move(spec))
  , seed_(seed)
  , registry_(std::move(anatomies))
{
    Rng init(derive_seed(seed, "init"));
    const int replicas = spec_.shared_learners ? registry_.anatomy_count() : 0;
    if (spec_.shared_learners && spec_.pn != PnKind::pn3 && spec_.pn != PnKind::pn4) {
        throw ConfigError("anatomy-shared learner replication needs pn3 or pn4, got " + std::string(to_string(spec_.pn)));
    }
    auto block = [&](std::string prefix, std::int64_t cin, std::int64_t cout, bool activation) {
        BlockSpec b{spec_.pn, cin, cout, activation, cout > 2, replicas};
        blocks_.emplace_back(std::move(prefix), b, spec_.block, registry_, init);
    };

    if (spec_.net == NetKind::dccnn) {
        const auto& d = spec_.dccnn;
        if (d.cascades < 1 || d.blocks < 2 || d.channels < 1) {
            throw ConfigError("dccnn needs >= 1 cascade, >= 2 blocks, >= 1 channel");
        }
        for (int c = 0; c < d.cascades; ++c) {
            for (int b = 0; b < d.blocks; ++b) {
                const bool last = b == d.blocks - 1;
                block("c" + std::to_string(c) + ".b" + std::to_string(b), b == 0 ? 2 : d.channels,
                      last ? 2 : d.channels, !last || d.final_activation);
            }
            if (d.soft_dc) registry_.add_shared("c" + std::to_string(c) + ".dc_lambda", ParamRole::dc_lambda, Tensor({1}, 1.0));
        }
    } else {
        const auto& u = spec_.unet;
        if (u.levels < 1 || u.base_channels < 1) throw ConfigError("unet needs >= 1 level and >= 1 channel");
        std::int64_t ch = u.base_channels;
        std::int64_t in = 2;
        for (int l = 0; l < u.levels; ++l) {
            block("down" + std::to_string(l) + ".0", in, ch, true);
            block("down" + std::to_string(l) + ".1", ch, ch, true);
            in = ch;
            ch *= 2;
        }
        block("bottleneck.0", in, ch, true);
        block("bottleneck.1", ch, ch, true);
        for (int l = u.levels - 1; l >= 0; --l) {
            const std::int64_t out = ch / 2;
            registry_.add_shared(unet_deconv(l), ParamRole::deconv,
                                 kaiming_uniform({ch, out, 2, 2}, ch * 4, spec_.block.leaky_slope, init));
            registry_.add_shared(unet_deconv_bias(l), ParamRole::conv_bias, Tensor({out}, 0.0));
            block("up" + std::to_string(l) + ".0", 2 * out, out, true);
            block("up" + std::to_string(l) + ".1", out, out, true);
            ch = out;
        }
        registry_.add_shared("head.conv1x1", ParamRole::conv1x1, kaiming_uniform({2, ch, 1, 1}, ch, 1.0, init));
        registry_.add_shared("head.bias", ParamRole::conv_bias, Tensor({2}, 0.0));
    }
    registry_.census();
}

void Model::check_extent(std::int64_t height, std::int64_t width) const
{
    if (spec_.net == NetKind::unet) {
        const std::int64_t f = std::int64_t{1} << spec_.unet.levels;
        if (height % f != 0 || width % f != 0) {
            throw ConfigError("unet with " + std::to_string(spec_.unet.levels) + " levels needs extents divisible by " +
                              std::to_string(f) + ", got " + std::to_string(height) + "x" + std::to_string(width));
        }
    }
}

Var Model::forward(ForwardContext& ctx, const std::vector<kspace::ComplexImage>& measured,
                   const kspace::SamplingMask& mask) const
{
    if (&ctx.registry != &registry_) throw ConfigError("forward context bound to a different model");
    if (measured.empty()) throw ConfigError("forward: empty batch");
    check_extent(measured.front().height, measured.front().width);
    if (spec_.net == NetKind::dccnn) return forward_dccnn(ctx, measured, mask);
    std::vector<kspace::ComplexImage> zero_filled;
    for (const auto& s : measured) zero_filled.push_back(kspace::ifft2(s));
    return forward_unet(ctx, ctx.graph.constant(kspace::to_network(zero_filled)));
}

Var Model::forward_dccnn(ForwardContext& ctx, const std::vector<kspace::ComplexImage>& measured,
                         const kspace::SamplingMask& mask) const
{
    std::vector<kspace::ComplexImage> zero_filled;
    for (const auto& s : measured) zero_filled.push_back(kspace::ifft2(s));
    Var x = ctx.graph.constant(kspace::to_network(zero_filled));
    const auto& d = spec_.dccnn;
    std::size_t next = 0;
    for (int c = 0; c < d.cascades; ++c) {
        Var y = x;
        for (int b = 0; b < d.blocks; ++b) y = blocks_[next++].forward(ctx, y);
        if (d.residual) y = ops::add(x, y);
        std::optional<Var> lambda;
        if (d.soft_dc) lambda = ctx.param("c" + std::to_string(c) + ".dc_lambda");
        x = kspace::dc_layer(y, measured, mask, lambda);
    }
    return x;
}

Var Model::forward_unet(ForwardContext& ctx, Var x) const
{
    const int levels = spec_.unet.levels;
    std::vector<Var> skips;
    std::size_t next = 0;
    for (int l = 0; l < levels; ++l) {
        x = blocks_[next++].forward(ctx, x);
        x = blocks_[next++].forward(ctx, x);
        skips.push_back(x);
        x = ops::max_pool2(x);
    }
    x = blocks_[next++].forward(ctx, x);
    x = blocks_[next++].forward(ctx, x);
    for (int l = levels - 1; l >= 0; --l) {
        x = ops::conv2d_transpose(x, ctx.param(unet_deconv(l)), ctx.param(unet_deconv_bias(l)), 2);
        x = ops::leaky_relu(x, spec_.block.leaky_slope);
        x = ops::concat_channels(x, skips[l]);
        x = blocks_[next++].forward(ctx, x);
        x = blocks_[next++].forward(ctx, x);
    }
    return ops::conv2d(x, ctx.param("head.conv1x1"), ctx.param("head.bias"));
}

std::vector<kspace::ComplexImage> Model::reconstruct(const std::vector<kspace::ComplexImage>& measured,
                                                     const kspace::SamplingMask& mask, int anatomy, ops::Mode mode)
{
    switch_anatomy(anatomy);
    Graph graph;
    ForwardContext ctx{graph, registry_, mode};
    ctx.track_gradients = false;
    const Tensor out = forward(ctx, measured, mask).value();
    std::vector<kspace::ComplexImage> images;
    for (std::int64_t b = 0; b < out.dim(0); ++b) images.push_back(kspace::from_network(out, b));
    return images;
}

Model build_model(const ModelSpec& spec, const std::vector<std::string>& anatomies, std::uint64_t seed)
{
    return Model(spec, anatomies, seed);
}

ModelSpec paper_dccnn_spec(PnKind pn, bool shared_learners)
{
    ModelSpec s;
    s.net = NetKind::dccnn;
    s.pn = pn;
    s.shared_learners = shared_learners;
    return s;
}

ModelSpec desk_dccnn_spec(PnKind pn, bool shared_learners)
{
    ModelSpec s = paper_dccnn_spec(pn, shared_learners);
    s.dccnn.cascades = 2;
    s.dccnn.blocks = 3;
    s.dccnn.channels = 16;
    return s;
}

ModelSpec desk_unet_spec(PnKind pn)
{
    ModelSpec s;
    s.net = NetKind::unet;
    s.pn = pn;
    s.unet.base_channels = 8;
    return s;
}

PartitionReport partition_report(const Model& model)
{
    const auto& reg = model.registry();
    return {reg.shared_count(), reg.specific_count(), reg.total_count()};
}

}  // namespace mapn
