#include "mapn/learners.hpp"

#include <cmath>

#include "mapn/error.hpp"

namespace mapn {

const char* to_string(PnKind kind)
{
    switch (kind) {
    case PnKind::pn0: return "pn0";
    case PnKind::pn1: return "pn1";
    case PnKind::pn2: return "pn2";
    case PnKind::pn3: return "pn3";
    case PnKind::pn4: return "pn4";
    }
    return "?";
}

PnKind pn_kind_from_string(std::string_view s)
{
    for (auto k : {PnKind::pn0, PnKind::pn1, PnKind::pn2, PnKind::pn3, PnKind::pn4}) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError("unknown PN kind '" + std::string(s) + "' (expected pn0..pn4)");
}

Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, double slope, Rng& rng)
{
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

Var ForwardContext::param(const std::string& name)
{
    Parameter& p = registry.lookup(name);
    const bool frozen = freeze_shared_conv3x3 && p.role == ParamRole::conv3x3 && p.partition == "shared";
    return graph.parameter(p, track_gradients && !frozen);
}

std::string PnBlock::adapter_name(int copy) const
{
    return copy < 0 ? prefix_ + ".adapter1x1" : prefix_ + ".adapter1x1_" + std::to_string(copy);
}

PnBlock::PnBlock(std::string prefix, BlockSpec spec, const BlockOptions& options, ParamRegistry& registry, Rng& init)
  : prefix_(std::move(prefix))
  , spec_(spec)
  , options_(options)
{
    if (spec_.cin < 1 || spec_.cout < 1) throw ConfigError(prefix_ + ": channel counts must be positive");
    if (spec_.shared_learners > 0 && !has_adapter()) {
        throw ConfigError(prefix_ + ": shared learner replication is defined for pn3/pn4 only, got " +
                          to_string(spec_.kind));
    }
    if (spec_.kind == PnKind::pn2 && spec_.squeeze_excite && spec_.cout / options_.se_ratio < 1) {
        throw ConfigError(prefix_ + ": too few channels for squeeze-excitation");
    }

    registry.add_shared(conv_name(), ParamRole::conv3x3,
                        kaiming_uniform({spec_.cout, spec_.cin, 3, 3}, spec_.cin * 9, options_.leaky_slope, init));

    auto add = [&](const std::string& name, ParamRole role, const Tensor& t, bool specific) {
        if (specific) {
            registry.add_specific(name, role, t);
        } else {
            registry.add_shared(name, role, t);
        }
    };
    const bool bn_specific = specific_bn();
    add(bn_name("gamma"), ParamRole::bn_gamma, Tensor({spec_.cout}, 1.0), bn_specific);
    add(bn_name("beta"), ParamRole::bn_beta, Tensor({spec_.cout}, 0.0), bn_specific);
    add(bn_name("running_mean"), ParamRole::bn_running_mean, Tensor({spec_.cout}, 0.0), bn_specific);
    add(bn_name("running_var"), ParamRole::bn_running_var, Tensor({spec_.cout}, 1.0), bn_specific);

    if (has_se()) {
        const auto hidden = spec_.cout / options_.se_ratio;
        add(se_name(1), ParamRole::dense, kaiming_uniform({hidden, spec_.cout}, spec_.cout, options_.leaky_slope, init),
            true);
        add(se_name(2), ParamRole::dense, kaiming_uniform({spec_.cout, hidden}, hidden, 1.0, init), true);
    }
    if (has_adapter()) {
        // Series learners map the conv output to itself; parallel learners map cin -> cout.
        const auto in = spec_.kind == PnKind::pn3 ? spec_.cout : spec_.cin;
        const Tensor zero({spec_.cout, in, 1, 1});
        if (spec_.shared_learners > 0) {
            for (int c = 0; c < spec_.shared_learners; ++c) add(adapter_name(c), ParamRole::conv1x1, zero, false);
        } else {
            add(adapter_name(), ParamRole::conv1x1, zero, true);
        }
    }
}

Var PnBlock::forward(ForwardContext& ctx, Var x) const
{
    if (x.value().rank() != 4 || x.value().dim(1) != spec_.cin) {
        throw ConfigError(prefix_ + ": expected " + std::to_string(spec_.cin) + " input channels, got " +
                          to_string(x.value().shape()));
    }
    auto adapters = [&](Var in) {
        if (spec_.shared_learners == 0) return ops::conv2d(in, ctx.param(adapter_name()), std::nullopt);
        Var acc = ops::conv2d(in, ctx.param(adapter_name(0)), std::nullopt);
        for (int c = 1; c < spec_.shared_learners; ++c) {
            acc = ops::add(acc, ops::conv2d(in, ctx.param(adapter_name(c)), std::nullopt));
        }
        return acc;
    };
    auto bn = [&](Var in) {
        Parameter& rm = ctx.registry.lookup(bn_name("running_mean"));
        Parameter& rv = ctx.registry.lookup(bn_name("running_var"));
        return ops::batchnorm(in, ctx.param(bn_name("gamma")), ctx.param(bn_name("beta")), rm.value, rv.value,
                              ctx.mode, options_.bn);
    };
    auto act = [&](Var in) { return spec_.activation ? ops::leaky_relu(in, options_.leaky_slope) : in; };

    Var h = ops::conv2d(x, ctx.param(conv_name()), std::nullopt, 1, 1);
    switch (spec_.kind) {
    case PnKind::pn0:
    case PnKind::pn1: return act(bn(h));
    case PnKind::pn2: {
        Var n = bn(h);
        if (!has_se()) return act(n);
        Var s = ops::global_avg_pool(n);
        s = ops::leaky_relu(ops::dense(s, ctx.param(se_name(1)), std::nullopt), options_.leaky_slope);
        Var g = ops::sigmoid(ops::dense(s, ctx.param(se_name(2)), std::nullopt));
        return act(ops::channel_gate(n, g));
    }
    case PnKind::pn3: return act(bn(ops::add(h, adapters(h))));
    case PnKind::pn4: return act(bn(ops::add(h, adapters(x))));
    }
    throw ConfigError("unreachable PN kind");
}

}  // namespace mapn
