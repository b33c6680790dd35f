#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/ops.hpp"
#include "mapn/random.hpp"
#include "mapn/registry.hpp"

namespace mapn {

/// Convolutional block variants. PN0 is the plain Conv-BN-LeakyReLU block; PN1-PN4
/// attach anatomy-specific learners to the anatomy-shared 3x3 convolution:
///   PN1  y = act(BN_a(W x))
///   PN2  h = BN_a(W x), g = sigmoid(D2_a(act(D1_a(gap(h))))), y = act(h * g)
///   PN3  h = W x, y = act(BN_a(h + C_a h))        (series 1x1 learner)
///   PN4  y = act(BN_a(W x + C_a x))               (parallel 1x1 learner)
enum class PnKind { pn0, pn1, pn2, pn3, pn4 };

const char* to_string(PnKind kind);
PnKind pn_kind_from_string(std::string_view s);

struct BlockOptions {
    double leaky_slope = 0.01;
    ops::BatchNormOptions bn;
    int se_ratio = 2;
};

struct BlockSpec {
    PnKind kind = PnKind::pn0;
    std::int64_t cin = 0;
    std::int64_t cout = 0;
    bool activation = true;
    /// PN2 only; output blocks with two channels carry no attention.
    bool squeeze_excite = true;
    /// When > 0 the 1x1 learner is replicated this many times as anatomy-shared tensors
    /// whose outputs are summed, and BN is shared (the multiple-anatomy-one-network
    /// variant of PN3/PN4 used as a parameter-matched ablation).
    int shared_learners = 0;
};

/// Per-pass state threaded through every block.
struct ForwardContext {
    Graph& graph;
    ParamRegistry& registry;
    ops::Mode mode = ops::Mode::train;
    /// Warm-up: the anatomy-shared 3x3 convolutions receive no gradient.
    bool freeze_shared_conv3x3 = false;
    /// Set false for inference passes that never call backward.
    bool track_gradients = true;

    Var param(const std::string& name);
};

/// One convolutional block. Holds only names and configuration; all tensors live in
/// the ParamRegistry so the active anatomy decides which specific learners are read.
class PnBlock {
public:
    PnBlock(std::string prefix, BlockSpec spec, const BlockOptions& options, ParamRegistry& registry, Rng& init);

    Var forward(ForwardContext& ctx, Var x) const;

    const std::string& prefix() const noexcept { return prefix_; }
    const BlockSpec& spec() const noexcept { return spec_; }

    std::string conv_name() const { return prefix_ + ".conv3x3"; }
    std::string bn_name(std::string_view field) const { return prefix_ + ".bn." + std::string(field); }
    std::string adapter_name(int copy = -1) const;
    std::string se_name(int layer) const { return prefix_ + ".se.fc" + std::to_string(layer); }

    bool has_adapter() const { return spec_.kind == PnKind::pn3 || spec_.kind == PnKind::pn4; }
    bool has_se() const { return spec_.kind == PnKind::pn2 && spec_.squeeze_excite; }
    bool specific_bn() const { return spec_.kind != PnKind::pn0 && spec_.shared_learners == 0; }

private:
    std::string prefix_;
    BlockSpec spec_;
    BlockOptions options_;
};

/// Kaiming-uniform (fan-in) initialisation for leaky-ReLU layers.
Tensor kaiming_uniform(Shape shape, std::int64_t fan_in, double slope, Rng& rng);

}  // namespace mapn
