#pragma once

#include <optional>

#include "mapn/autodiff.hpp"

namespace mapn::ops {

enum class Mode { train, eval };

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Cross-correlation of x[B,Cin,H,W] with w[Cout,Cin,k,k].
Var conv2d(Var x, Var w, std::optional<Var> bias, int stride = 1, int padding = 0);

/// Transposed convolution, w[Cin,Cout,k,k]; adjoint of conv2d with the same weight and stride.
Var conv2d_transpose(Var x, Var w, std::optional<Var> bias, int stride = 2);

/// Per-channel batch normalisation over (B,H,W). In train mode the batch statistics are
/// used and the running statistics are updated in place; eval mode reads them.
Var batchnorm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
              const BatchNormOptions& options = {});

Var leaky_relu(Var x, double slope = 0.01);
Var sigmoid(Var x);
/// [B,C,H,W] -> [B,C]
Var global_avg_pool(Var x);
/// x[B,Cin] * w[Cout,Cin]^T + b
Var dense(Var x, Var w, std::optional<Var> bias);
/// 2x2 max pooling, stride 2. Requires even H and W.
Var max_pool2(Var x);
/// Mean absolute difference; gradient flows to both arguments.
Var l1_loss(Var pred, Var target);

Var add(Var a, Var b);
Var sum(Var x);
/// x[B,C,H,W] scaled by g[B,C] broadcast over space.
Var channel_gate(Var x, Var g);
/// Concatenation along the channel axis of two [B,*,H,W] tensors.
Var concat_channels(Var a, Var b);

}  // namespace mapn::ops
