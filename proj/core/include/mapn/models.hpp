#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mapn/kspace.hpp"
#include "mapn/learners.hpp"

namespace mapn {

enum class NetKind { unet, dccnn };

const char* to_string(NetKind kind);
NetKind net_kind_from_string(std::string_view s);

struct DccnnConfig {
    int cascades = 5;
    int blocks = 5;
    int channels = 64;
    /// Each sub-CNN computes x + f(x) before data consistency.
    bool residual = true;
    /// Whether the last (64 -> 2) block of a sub-CNN ends in a LeakyReLU.
    bool final_activation = false;
    bool soft_dc = false;
};

struct UNetConfig {
    int levels = 4;
    int base_channels = 32;
};

struct ModelSpec {
    NetKind net = NetKind::dccnn;
    PnKind pn = PnKind::pn0;
    /// Replicate the 1x1 learners as anatomy-shared tensors, one copy per anatomy, with
    /// shared BN. Only meaningful for pn3/pn4.
    bool shared_learners = false;
    DccnnConfig dccnn;
    UNetConfig unet;
    BlockOptions block;
};

/// A reconstruction network together with its parameter registry. Copyable; a copy
/// is an independent clone.
class Model {
public:
    Model(ModelSpec spec, std::vector<std::string> anatomies, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }
    std::uint64_t seed() const noexcept { return seed_; }
    ParamRegistry& registry() noexcept { return registry_; }
    const ParamRegistry& registry() const noexcept { return registry_; }
    const std::vector<PnBlock>& blocks() const noexcept { return blocks_; }

    void switch_anatomy(int index) { registry_.switch_anatomy(index); }

    /// Reconstructs a batch of single-anatomy measurements sharing one mask.
    /// Returns the [B,2,H,W] image estimate.
    Var forward(ForwardContext& ctx, const std::vector<kspace::ComplexImage>& measured,
                const kspace::SamplingMask& mask) const;

    /// Inference convenience: switches to `anatomy`, runs without gradient tracking.
    std::vector<kspace::ComplexImage> reconstruct(const std::vector<kspace::ComplexImage>& measured,
                                                  const kspace::SamplingMask& mask, int anatomy,
                                                  ops::Mode mode = ops::Mode::eval);

    /// Throws ConfigError when the image extent is not usable by this network.
    void check_extent(std::int64_t height, std::int64_t width) const;

private:
    Var forward_dccnn(ForwardContext& ctx, const std::vector<kspace::ComplexImage>& measured,
                      const kspace::SamplingMask& mask) const;
    Var forward_unet(ForwardContext& ctx, Var x) const;

    ModelSpec spec_;
    std::uint64_t seed_;
    ParamRegistry registry_;
    std::vector<PnBlock> blocks_;
};

Model build_model(const ModelSpec& spec, const std::vector<std::string>& anatomies, std::uint64_t seed);

/// Full-width DCCNN of the `paper` preset (5 cascades x 5 blocks x 64 channels).
ModelSpec paper_dccnn_spec(PnKind pn, bool shared_learners = false);
/// Desk-scale DCCNN (2 cascades x 3 blocks x 16 channels).
ModelSpec desk_dccnn_spec(PnKind pn, bool shared_learners = false);
ModelSpec desk_unet_spec(PnKind pn);

struct PartitionReport {
    std::int64_t shared_count = 0;
    std::int64_t specific_count_per_anatomy = 0;
    std::int64_t total = 0;
};

/// Exact scalar counts by partition. BN running statistics are counted with the
/// partition their layer belongs to.
PartitionReport partition_report(const Model& model);

}  // namespace mapn
